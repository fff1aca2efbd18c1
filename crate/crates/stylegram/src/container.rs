//! Binary weight container.
//!
//! Layout, in file order:
//!
//! 1. 8-byte magic `GRAMWT01`
//! 2. `u32` little-endian manifest length
//! 3. UTF-8 JSON manifest (see [`Manifest`])
//! 4. raw little-endian payload holding every tensor back to back
//! 5. trailing `u32` little-endian CRC32 (IEEE) of the payload bytes
//!
//! The manifest lists one entry per tensor with its byte range inside the
//! payload, and records the pixel preprocessing convention of the weights
//! (mean pixel, channel order) so image handling stays config data rather
//! than hard-coded constants.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::{LayerSpec, LayerWeights, Network, NetworkWeights};

pub const CONTAINER_MAGIC: &[u8; 8] = b"GRAMWT01";

#[derive(Debug, Clone, PartialEq)]
pub enum ContainerError {
    Io {
        path: String,
        message: String,
    },
    BadMagic,
    Truncated,
    Manifest(String),
    /// A required tensor is not present.
    Missing {
        name: String,
        kind: String,
    },
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    UnsupportedDtype {
        name: String,
        dtype: String,
    },
    RangeOutOfBounds {
        name: String,
    },
    ChecksumMismatch {
        stored: u32,
        computed: u32,
    },
    NonFinite {
        name: String,
    },
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::Io { path, message } => write!(f, "{path}: {message}"),
            ContainerError::BadMagic => write!(f, "not a weight container (bad magic)"),
            ContainerError::Truncated => write!(f, "weight container truncated"),
            ContainerError::Manifest(m) => write!(f, "weight container manifest: {m}"),
            ContainerError::Missing { name, kind } => {
                write!(f, "{name} absent from weight container (no {kind} entry)")
            }
            ContainerError::ShapeMismatch {
                name,
                expected,
                got,
            } => {
                write!(f, "entry {name}: shape {got:?}, expected {expected:?}")
            }
            ContainerError::UnsupportedDtype { name, dtype } => {
                write!(f, "entry {name}: unsupported dtype {dtype}")
            }
            ContainerError::RangeOutOfBounds { name } => {
                write!(f, "entry {name}: byte range outside payload")
            }
            ContainerError::ChecksumMismatch { stored, computed } => write!(
                f,
                "payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
            ),
            ContainerError::NonFinite { name } => {
                write!(f, "entry {name} contains non-finite values")
            }
        }
    }
}

impl std::error::Error for ContainerError {}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    /// `"kernel"` or `"bias"`.
    pub kind: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

fn default_mean_pixel() -> [f64; 3] {
    // mean of the published normalized VGG-19 training data, in container
    // channel order
    [104.006, 116.669, 122.679]
}

fn default_channel_order() -> String {
    "bgr".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    #[serde(default)]
    pub architecture: String,
    /// Mean pixel subtracted during preprocessing, in container channel order.
    #[serde(default = "default_mean_pixel")]
    pub mean_pixel: [f64; 3],
    /// Channel order the kernels expect, `"bgr"` or `"rgb"`.
    #[serde(default = "default_channel_order")]
    pub channel_order: String,
    pub entries: Vec<ManifestEntry>,
}

/// A parsed container: manifest plus raw payload, checksum already verified.
#[derive(Debug, Clone)]
pub struct WeightContainer {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

impl WeightContainer {
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| ContainerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_bytes(&bytes)
    }

    pub fn read_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 12 {
            return Err(ContainerError::Truncated);
        }
        if &bytes[0..8] != CONTAINER_MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_start = 12 + manifest_len;
        if bytes.len() < payload_start + 4 {
            return Err(ContainerError::Truncated);
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[12..payload_start])
            .map_err(|e| ContainerError::Manifest(e.to_string()))?;
        let payload = &bytes[payload_start..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(ContainerError::ChecksumMismatch { stored, computed });
        }
        Ok(Self {
            manifest,
            payload: payload.to_vec(),
        })
    }

    pub fn entry(&self, name: &str, kind: &str) -> Option<&ManifestEntry> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.name == name && e.kind == kind)
    }

    /// Decode one entry's payload slice to `f64`.
    pub fn entry_values(&self, entry: &ManifestEntry) -> Result<Vec<f64>, ContainerError> {
        if entry.dtype != "f32" {
            return Err(ContainerError::UnsupportedDtype {
                name: entry.name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_length as usize;
        if end > self.payload.len() || !entry.byte_length.is_multiple_of(4) {
            return Err(ContainerError::RangeOutOfBounds {
                name: entry.name.clone(),
            });
        }
        let count: usize = entry.shape.iter().product();
        if count * 4 != entry.byte_length as usize {
            return Err(ContainerError::ShapeMismatch {
                name: entry.name.clone(),
                expected: entry.shape.clone(),
                got: vec![entry.byte_length as usize / 4],
            });
        }
        let mut out = Vec::with_capacity(count);
        for chunk in self.payload[start..end].chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(ContainerError::NonFinite {
                    name: entry.name.clone(),
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// In-memory builder for the container format; used by tests and tooling.
#[derive(Debug, Default)]
pub struct ContainerBuilder {
    architecture: String,
    mean_pixel: [f64; 3],
    channel_order: String,
    entries: Vec<ManifestEntry>,
    payload: Vec<u8>,
}

impl ContainerBuilder {
    pub fn new(architecture: &str) -> Self {
        Self {
            architecture: architecture.to_string(),
            mean_pixel: default_mean_pixel(),
            channel_order: default_channel_order(),
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn mean_pixel(mut self, mean: [f64; 3]) -> Self {
        self.mean_pixel = mean;
        self
    }

    pub fn channel_order(mut self, order: &str) -> Self {
        self.channel_order = order.to_string();
        self
    }

    pub fn push_f32(&mut self, name: &str, kind: &str, shape: &[usize], values: &[f32]) {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let byte_offset = self.payload.len() as u64;
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(ManifestEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            shape: shape.to_vec(),
            dtype: "f32".to_string(),
            byte_offset,
            byte_length: (values.len() * 4) as u64,
        });
    }

    pub fn finish(self) -> Vec<u8> {
        let manifest = Manifest {
            architecture: self.architecture,
            mean_pixel: self.mean_pixel,
            channel_order: self.channel_order,
            entries: self.entries,
        };
        let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + manifest_bytes.len() + self.payload.len() + 4);
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest_bytes);
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&crc32fast::hash(&self.payload).to_le_bytes());
        out
    }
}

/// Load and validate weights for the given layer table. Every layer must
/// have a kernel entry shaped `[out, in, 3, 3]` and a bias entry shaped
/// `[out]`.
pub fn load_network_weights(
    container: &WeightContainer,
    specs: &[LayerSpec],
) -> Result<NetworkWeights, ContainerError> {
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let kernel_entry =
            container
                .entry(&spec.name, "kernel")
                .ok_or_else(|| ContainerError::Missing {
                    name: spec.name.clone(),
                    kind: "kernel".to_string(),
                })?;
        let expected_kernel = vec![spec.out_channels, spec.in_channels, 3, 3];
        if kernel_entry.shape != expected_kernel {
            return Err(ContainerError::ShapeMismatch {
                name: spec.name.clone(),
                expected: expected_kernel,
                got: kernel_entry.shape.clone(),
            });
        }
        let bias_entry =
            container
                .entry(&spec.name, "bias")
                .ok_or_else(|| ContainerError::Missing {
                    name: spec.name.clone(),
                    kind: "bias".to_string(),
                })?;
        if bias_entry.shape != [spec.out_channels] {
            return Err(ContainerError::ShapeMismatch {
                name: spec.name.clone(),
                expected: vec![spec.out_channels],
                got: bias_entry.shape.clone(),
            });
        }
        let kernel = container.entry_values(kernel_entry)?;
        let bias = container.entry_values(bias_entry)?;
        layers.push(
            LayerWeights::new(
                &spec.name,
                spec.in_channels,
                spec.out_channels,
                kernel,
                bias,
            )
            .expect("shapes validated above"),
        );
    }
    Ok(NetworkWeights { layers })
}

/// Read a container from disk and build the VGG-19 trunk from it.
pub fn load_vgg19(path: impl AsRef<Path>) -> Result<(Network, Manifest), ContainerError> {
    let container = WeightContainer::read_file(path)?;
    let specs = crate::network::vgg19_layer_specs();
    let weights = load_network_weights(&container, &specs)?;
    Ok((Network::new(specs, weights), container.manifest))
}

/// Serialize a network (typically a toy fixture) into container bytes.
pub fn network_to_container_bytes(net: &Network, architecture: &str) -> Vec<u8> {
    let mut builder = ContainerBuilder::new(architecture);
    for (spec, layer) in net.specs.iter().zip(&net.weights.layers) {
        let kernel: Vec<f32> = layer.kernel.iter().map(|v| *v as f32).collect();
        let bias: Vec<f32> = layer.bias.iter().map(|v| *v as f32).collect();
        builder.push_f32(
            &spec.name,
            "kernel",
            &[spec.out_channels, spec.in_channels, 3, 3],
            &kernel,
        );
        builder.push_f32(&spec.name, "bias", &[spec.out_channels], &bias);
    }
    builder.finish()
}
