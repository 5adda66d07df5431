//! Network adapters: a uniform view of a frozen 3D CNN as a set of
//! addressable kernels with a differentiable response.

mod conv;
mod reference;

pub use conv::{Activation, Conv3d, Conv3dStack, Layer};
pub use reference::{
    direction_tuning, drifting_grating, make_reference_kernel, Designation, ReferenceNet,
    GABOR_SIGMA, STANDARD_DIRECTIONS,
};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, VideoTensor};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Where a kernel's response is read: before or after the layer's
/// nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Tap {
    #[default]
    Post,
    Pre,
}

/// Addresses one output channel of one 3D convolution layer.
///
/// The text form is `<layer path>/<channel>` with an optional `:pre` or
/// `:post` suffix, e.g. `layer1/0` or `stage3/conv2/17:pre`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KernelRef {
    pub layer_id: String,
    pub channel: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub tap: Tap,
}

impl KernelRef {
    pub fn new(layer_id: impl Into<String>, channel: usize) -> Self {
        KernelRef {
            layer_id: layer_id.into(),
            channel,
            tap: Tap::Post,
        }
    }

    pub fn with_tap(mut self, tap: Tap) -> Self {
        self.tap = tap;
        self
    }
}

impl fmt::Display for KernelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.layer_id, self.channel)?;
        if self.tap == Tap::Pre {
            f.write_str(":pre")?;
        }
        Ok(())
    }
}

impl FromStr for KernelRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (path, tap) = match s.rsplit_once(':') {
            Some((p, "pre")) => (p, Tap::Pre),
            Some((p, "post")) => (p, Tap::Post),
            Some((_, other)) => {
                return Err(Error::invalid(format!("unknown response tap `{other}` in `{s}`")))
            }
            None => (s, Tap::Post),
        };
        let (layer, channel) = path
            .rsplit_once('/')
            .ok_or_else(|| Error::invalid(format!("kernel `{s}` is not of the form <layer>/<channel>")))?;
        if layer.is_empty() {
            return Err(Error::invalid(format!("kernel `{s}` has an empty layer path")));
        }
        let channel = channel
            .parse()
            .map_err(|_| Error::invalid(format!("kernel `{s}` has a non-numeric channel")))?;
        Ok(KernelRef {
            layer_id: layer.to_string(),
            channel,
            tap,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerInfo {
    pub id: String,
    pub channels: usize,
}

/// Input requirements. `None` means the network accepts any extent along
/// that axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct InputSpec {
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: usize,
}

impl InputSpec {
    pub fn check(&self, v: &VideoTensor) -> Result<()> {
        let fixed = [
            ("frames", self.frames, v.frames()),
            ("height", self.height, v.height()),
            ("width", self.width, v.width()),
        ];
        for (axis, want, got) in fixed {
            if let Some(want) = want {
                if want != got {
                    return Err(Error::invalid(format!("network expects {axis} {want}, video has {got}")));
                }
            }
        }
        if v.channels() != self.channels {
            return Err(Error::invalid(format!(
                "network expects {} channels, video has {}",
                self.channels,
                v.channels()
            )));
        }
        Ok(())
    }
}

/// A frozen, differentiable 3D CNN.
///
/// Implementations must be deterministic and must never modify their
/// weights; [`NetworkAdapter::weights_digest`] lets callers verify that.
pub trait NetworkAdapter {
    fn name(&self) -> &str;

    fn input_spec(&self) -> InputSpec;

    /// Addressable layers, in network order.
    fn layers(&self) -> Vec<LayerInfo>;

    /// The selected channel's full `(T', H', W')` response to `v`.
    fn kernel_response(&self, k: &KernelRef, v: &VideoTensor) -> Result<FeatureMap>;

    /// Response plus the vector-Jacobian product: the gradient of
    /// `<grad_map, response(v)>` with respect to `v`, channel-last.
    fn kernel_response_vjp(
        &self,
        k: &KernelRef,
        v: &VideoTensor,
        grad_map: &FeatureMap,
    ) -> Result<(FeatureMap, Vec<f32>)>;

    /// SHA-256 over the architecture and weights.
    fn weights_digest(&self) -> [u8; 32];

    /// Whether concurrent forward passes on one instance are allowed.
    fn is_reentrant(&self) -> bool {
        true
    }

    /// Checks that `k` names an existing layer and channel.
    fn resolve(&self, k: &KernelRef) -> Result<LayerInfo> {
        let layer = self
            .layers()
            .into_iter()
            .find(|l| l.id == k.layer_id)
            .ok_or_else(|| Error::NotFound(format!("kernel {k}: no layer `{}`", k.layer_id)))?;
        if k.channel >= layer.channels {
            return Err(Error::NotFound(format!(
                "kernel {k}: layer `{}` has {} channels",
                layer.id, layer.channels
            )));
        }
        Ok(layer)
    }
}

/// Every `(layer, channel)` pair in network order.
pub fn list_kernels(adapter: &dyn NetworkAdapter) -> Vec<KernelRef> {
    adapter
        .layers()
        .into_iter()
        .flat_map(|l| (0..l.channels).map(move |c| KernelRef::new(l.id.clone(), c)))
        .collect()
}

/// Lowercase hex rendering of a digest.
pub fn digest_hex(digest: &[u8; 32]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_ref_parsing() {
        let k: KernelRef = "stage3/conv2/17:pre".parse().unwrap();
        assert_eq!(k.layer_id, "stage3/conv2");
        assert_eq!(k.channel, 17);
        assert_eq!(k.tap, Tap::Pre);
        assert_eq!(k.to_string(), "stage3/conv2/17:pre");
        let k: KernelRef = "layer1/0".parse().unwrap();
        assert_eq!(k, KernelRef::new("layer1", 0));
        assert!("layer1".parse::<KernelRef>().is_err());
        assert!("/3".parse::<KernelRef>().is_err());
        assert!("layer1/x".parse::<KernelRef>().is_err());
        assert!("layer1/0:mid".parse::<KernelRef>().is_err());
    }
}
