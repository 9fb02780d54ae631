//! CPU forward pass of the five-level U-Net, its weight archive, and the
//! conversions between solver fields and network tensors.
//!
//! Tensors at the solver boundary are `(n, n, c)`, row-major with the channel
//! index fastest. Row `r`, column `s` is the real-space sample at
//! `(x1, x2) = (xs[s], xs[r])`, the same layout as [`Grid::to_real`].
//! Inside the network, activations are channel-major `(c, h, w)` in `f32`.
//!
//! Parameter names for levels `l = 1..=depth` (level 1 is full resolution):
//!
//! | name | dims |
//! |------|------|
//! | `enc{l}.conv1.weight` | `[w_l, c_in, 3, 3]`, `c_in` = input channels at level 1, else `w_{l-1}` |
//! | `enc{l}.conv2.weight` | `[w_l, w_l, 3, 3]` |
//! | `up{l}.weight` (l < depth) | `[w_l, w_{l+1}, 2, 2]`, transposed conv from level `l+1` |
//! | `dec{l}.conv1.weight` (l < depth) | `[w_l, 2 w_l, 3, 3]`, input is `[skip, up]` concatenated |
//! | `dec{l}.conv2.weight` (l < depth) | `[w_l, w_l, 3, 3]` |
//! | `out.weight` | `[c_out, w_1, 1, 1]` |
//!
//! Every weight has a matching `.bias` of length equal to its first dim. All
//! weights use the `[out, in, kh, kw]` layout, including the transposed
//! convolution. 3x3 convolutions are zero-padded and followed by ReLU; the
//! transposed and the final 1x1 convolutions are not.
//!
//! Archive format (`GPUW`), all integers little-endian:
//!
//! ```text
//! b"GPUW" | u32 version = 1 | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 ndim (1..=4) | ndim x u32 dims | f32 data
//! ```

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"GPUW";
pub const ARCHIVE_VERSION: u32 = 1;

/// Topology of the network; serialized as the JSON sidecar next to an archive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
    /// Grid size the weights were trained on, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<usize>,
}

fn default_in_channels() -> usize {
    4
}

fn default_out_channels() -> usize {
    2
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_base_width(64)
    }
}

impl NetworkSpec {
    /// Five levels with widths `b, 2b, 4b, 8b, 16b`, 4 inputs, 2 outputs.
    pub fn with_base_width(base: usize) -> Self {
        Self {
            widths: (0..5).map(|l| base << l).collect(),
            in_channels: 4,
            out_channels: 2,
            input_size: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << self.depth().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Model(format!("widths must be nonempty and positive, got {:?}", self.widths)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Model("channel counts must be positive".into()));
        }
        if let Some(m) = self.input_size {
            if m % self.size_divisor() != 0 {
                return Err(Error::Model(format!(
                    "input size {m} is not divisible by {}",
                    self.size_divisor()
                )));
            }
        }
        Ok(())
    }

    /// Every parameter tensor in archive order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let w = &self.widths;
        let depth = w.len();
        let mut out = Vec::new();
        let mut conv = |name: String, cout: usize, cin: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        for l in 0..depth {
            let cin = if l == 0 { self.in_channels } else { w[l - 1] };
            conv(format!("enc{}.conv1", l + 1), w[l], cin, 3);
            conv(format!("enc{}.conv2", l + 1), w[l], w[l], 3);
        }
        for l in (0..depth - 1).rev() {
            conv(format!("up{}", l + 1), w[l], w[l + 1], 2);
            conv(format!("dec{}.conv1", l + 1), w[l], 2 * w[l], 3);
            conv(format!("dec{}.conv2", l + 1), w[l], w[l], 3);
        }
        conv("out".into(), self.out_channels, w[0], 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of uniquely named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    tensors: Vec<NamedTensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Archive(format!("tensor {name}: {} dims (1 to 4 allowed)", dims.len())));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Archive(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Archive(format!("duplicate tensor {name}")));
        }
        self.tensors.push(NamedTensor { name, dims, data });
        Ok(())
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// All-zero weights and biases for `spec`.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let tensors = spec
            .tensor_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let len = dims.iter().product();
                NamedTensor { name, dims, data: vec![0.0; len] }
            })
            .collect();
        Self { tensors }
    }

    /// He-normal weights and small normal biases, deterministic in `seed`.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .tensor_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let len: usize = dims.iter().product();
                let std = if dims.len() == 4 {
                    (2.0 / (dims[1] * dims[2] * dims[3]) as f32).sqrt()
                } else {
                    0.01
                };
                let dist = Normal::new(0.0f32, std).expect("finite std");
                let data = (0..len).map(|_| dist.sample(&mut rng)).collect();
                NamedTensor { name, dims, data }
            })
            .collect();
        Self { tensors }
    }

    /// Checks that the archive holds exactly the tensors of `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        spec.validate()?;
        let shapes = spec.tensor_shapes();
        for (name, dims) in &shapes {
            match self.get(name) {
                None => return Err(Error::Archive(format!("missing tensor {name}"))),
                Some(t) if &t.dims != dims => {
                    return Err(Error::Archive(format!(
                        "tensor {name} has dims {:?}, expected {dims:?}",
                        t.dims
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.iter().find(|t| !shapes.iter().any(|(n, _)| *n == t.name)) {
            return Err(Error::Archive(format!("unexpected tensor {}", extra.name)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ArchiveReader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != ARCHIVE_MAGIC {
            return Err(Error::Archive(format!("bad magic {magic:?} at byte 0")));
        }
        let version = r.u32("version")?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!("unsupported version {version} at byte 4")));
        }
        let count = r.u32("tensor count")?;
        let mut archive = Self::new();
        for i in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Archive(format!("tensor {i}: name is not UTF-8 at byte {at}")))?
                .to_owned();
            let at = r.pos;
            let ndim = r.u32("ndim")? as usize;
            if ndim == 0 || ndim > 4 {
                return Err(Error::Archive(format!("tensor {name}: ndim {ndim} at byte {at}")));
            }
            let dims = (0..ndim).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|l| l.checked_mul(4))
                .ok_or_else(|| Error::Archive(format!("tensor {name}: dims {dims:?} overflow")))?;
            let raw = r.take(len, "tensor data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            archive.push(name, dims, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Archive(format!(
                "{} trailing bytes after byte {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(archive)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct ArchiveReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ArchiveReader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Archive(format!(
                "truncated {what} at byte {}: need {len} bytes, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// `(rows, cols, channels)` tensor, channel index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols}x{channels} = {} values", rows * cols * channels),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + ch]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Selects channels `[start, start + count)`.
    pub fn channels(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.channels {
            return Err(Error::ShapeMismatch {
                expected: format!("at least {} channels", start + count),
                got: format!("{}", self.channels),
            });
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| px[start..start + count].iter().copied())
            .collect();
        Ok(Tensor { rows: self.rows, cols: self.cols, channels: count, data })
    }
}

/// Real and imaginary parts of a field in real space, `(n, n, 2)`.
pub fn field_channels(f: &Field) -> Tensor {
    let n = f.grid().n();
    let data = f.to_real().iter().flat_map(|z| [z.re, z.im]).collect();
    Tensor { rows: n, cols: n, channels: 2, data }
}

/// Network input `[Re phi, Im phi, Re g, Im g]` in real space, unscaled.
pub fn prepare_input(phi: &Field, g: &Field) -> Result<Tensor> {
    phi.check_same_grid(g)?;
    let n = phi.grid().n();
    let (p, q) = (phi.to_real(), g.to_real());
    let data = p.iter().zip(&q).flat_map(|(a, b)| [a.re, a.im, b.re, b.im]).collect();
    Ok(Tensor { rows: n, cols: n, channels: 4, data })
}

/// Reads a two-channel `(n, n, 2)` tensor as a complex real-space field.
/// The result is not normalized.
pub fn postprocess(output: &Tensor, grid: &Arc<Grid>) -> Result<Field> {
    let n = grid.n();
    if output.shape() != (n, n, 2) {
        return Err(Error::ShapeMismatch {
            expected: format!("({n}, {n}, 2)"),
            got: format!("{:?}", output.shape()),
        });
    }
    let samples: Vec<Complex64> =
        output.data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Field::from_real(grid.clone(), &samples)
}

/// Channel-major activation.
#[derive(Clone, Debug)]
struct Act {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Act {
    fn relu(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
        self
    }

    fn maxpool(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = vec![0.0; self.c * h * w];
        for ch in 0..self.c {
            let src = &self.data[ch * self.h * self.w..];
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * self.w + 2 * x;
                    data[(ch * h + y) * w + x] =
                        src[i].max(src[i + 1]).max(src[i + self.w]).max(src[i + self.w + 1]);
                }
            }
        }
        Self { c: self.c, h, w, data }
    }

    fn concat(mut self, other: Act) -> Self {
        self.c += other.c;
        self.data.extend_from_slice(&other.data);
        self
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f32>() + tail
}

const PIXEL_BLOCK: usize = 32;

/// Same-size convolution with odd kernel `k` and zero padding.
#[derive(Clone, Debug)]
struct Conv {
    cout: usize,
    cin: usize,
    k: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv {
    fn apply(&self, x: &Act) -> Act {
        debug_assert_eq!(x.c, self.cin);
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let klen = self.cin * k * k;
        let pixels = h * w;
        let mut out = vec![0.0f32; self.cout * pixels];
        let mut patches = vec![0.0f32; PIXEL_BLOCK * klen];
        for p0 in (0..pixels).step_by(PIXEL_BLOCK) {
            let pn = PIXEL_BLOCK.min(pixels - p0);
            for (pi, patch) in patches.chunks_exact_mut(klen).take(pn).enumerate() {
                let (y, xx) = (((p0 + pi) / w) as isize, ((p0 + pi) % w) as isize);
                for ci in 0..self.cin {
                    let src = &x.data[ci * pixels..(ci + 1) * pixels];
                    for ky in 0..k {
                        let sy = y + ky as isize - pad;
                        for kx in 0..k {
                            let sx = xx + kx as isize - pad;
                            let inside = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                            patch[(ci * k + ky) * k + kx] =
                                if inside { src[sy as usize * w + sx as usize] } else { 0.0 };
                        }
                    }
                }
            }
            for o in 0..self.cout {
                let wo = &self.weight[o * klen..(o + 1) * klen];
                let row = &mut out[o * pixels + p0..o * pixels + p0 + pn];
                for (pi, v) in row.iter_mut().enumerate() {
                    *v = self.bias[o] + dot(wo, &patches[pi * klen..(pi + 1) * klen]);
                }
            }
        }
        Act { c: self.cout, h, w, data: out }
    }
}

/// Kernel 2, stride 2 transposed convolution; weights regrouped per kernel
/// offset as `[dy * 2 + dx][out][in]`.
#[derive(Clone, Debug)]
struct UpConv {
    cout: usize,
    cin: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl UpConv {
    fn new(weight: &[f32], bias: Vec<f32>, cout: usize, cin: usize) -> Self {
        let mut regrouped = vec![0.0; weight.len()];
        for o in 0..cout {
            for i in 0..cin {
                for d in 0..4 {
                    regrouped[(d * cout + o) * cin + i] = weight[(o * cin + i) * 4 + d];
                }
            }
        }
        Self { cout, cin, weight: regrouped, bias }
    }

    fn apply(&self, x: &Act) -> Act {
        let pixels = x.h * x.w;
        let (h2, w2) = (2 * x.h, 2 * x.w);
        let mut transposed = vec![0.0f32; pixels * self.cin];
        for i in 0..self.cin {
            for p in 0..pixels {
                transposed[p * self.cin + i] = x.data[i * pixels + p];
            }
        }
        let mut out = vec![0.0f32; self.cout * h2 * w2];
        for d in 0..4 {
            let (dy, dx) = (d / 2, d % 2);
            for o in 0..self.cout {
                let wo = &self.weight[(d * self.cout + o) * self.cin..(d * self.cout + o + 1) * self.cin];
                for p in 0..pixels {
                    let (y, xx) = (p / x.w, p % x.w);
                    out[(o * h2 + 2 * y + dy) * w2 + 2 * xx + dx] =
                        self.bias[o] + dot(wo, &transposed[p * self.cin..(p + 1) * self.cin]);
                }
            }
        }
        Act { c: self.cout, h: h2, w: w2, data: out }
    }
}

/// Forward executor bound to validated weights. Immutable and shareable.
#[derive(Clone, Debug)]
pub struct UNet {
    spec: NetworkSpec,
    enc: Vec<(Conv, Conv)>,
    up: Vec<UpConv>,
    dec: Vec<(Conv, Conv)>,
    out: Conv,
}

impl UNet {
    pub fn from_archive(spec: NetworkSpec, archive: &WeightArchive) -> Result<Self> {
        archive.validate(&spec)?;
        let tensor = |name: &str| archive.get(name).expect("validated");
        let conv = |name: &str| {
            let w = tensor(&format!("{name}.weight"));
            Conv {
                cout: w.dims[0],
                cin: w.dims[1],
                k: w.dims[2],
                weight: w.data.clone(),
                bias: tensor(&format!("{name}.bias")).data.clone(),
            }
        };
        let depth = spec.depth();
        let enc = (1..=depth)
            .map(|l| (conv(&format!("enc{l}.conv1")), conv(&format!("enc{l}.conv2"))))
            .collect();
        let up = (1..depth)
            .map(|l| {
                let w = tensor(&format!("up{l}.weight"));
                UpConv::new(&w.data, tensor(&format!("up{l}.bias")).data.clone(), w.dims[0], w.dims[1])
            })
            .collect();
        let dec = (1..depth)
            .map(|l| (conv(&format!("dec{l}.conv1")), conv(&format!("dec{l}.conv2"))))
            .collect();
        let out = conv("out");
        Ok(Self { spec, enc, up, dec, out })
    }

    /// Loads an archive and its JSON sidecar.
    pub fn load(weights: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let spec = NetworkSpec::read(sidecar)?;
        Self::from_archive(spec, &WeightArchive::read(weights)?)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// `(h, w, in_channels)` to `(h, w, out_channels)`; `h` and `w` must be
    /// multiples of [`NetworkSpec::size_divisor`].
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w, c) = input.shape();
        let div = self.spec.size_divisor();
        if c != self.spec.in_channels || h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("(h, w, {}) with h, w multiples of {div}", self.spec.in_channels),
                got: format!("{:?}", input.shape()),
            });
        }
        let mut data = vec![0.0f32; input.data.len()];
        for (p, px) in input.data.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + p] = v as f32;
            }
        }
        let mut x = Act { c, h, w, data };
        let mut skips = Vec::with_capacity(self.up.len());
        for (l, (c1, c2)) in self.enc.iter().enumerate() {
            if l > 0 {
                x = x.maxpool();
            }
            x = c2.apply(&c1.apply(&x).relu()).relu();
            if l + 1 < self.enc.len() {
                skips.push(x.clone());
            }
        }
        for l in (0..self.up.len()).rev() {
            let up = self.up[l].apply(&x);
            let (c1, c2) = &self.dec[l];
            x = c2.apply(&c1.apply(&skips.pop().expect("one skip per level").concat(up)).relu()).relu();
        }
        let y = self.out.apply(&x);
        let cout = y.c;
        let mut out = vec![0.0f64; h * w * cout];
        for ch in 0..cout {
            for p in 0..h * w {
                out[p * cout + ch] = f64::from(y.data[ch * h * w + p]);
            }
        }
        Tensor::new(h, w, cout, out)
    }

    /// `prepare_input`, forward, `postprocess`.
    pub fn predict_field(&self, phi: &Field, g: &Field) -> Result<Field> {
        if let Some(m) = self.spec.input_size {
            if m != phi.grid().n() {
                return Err(Error::Model(format!("model trained on n = {m}, grid has n = {}", phi.grid().n())));
            }
        }
        let out = self.forward(&prepare_input(phi, g)?)?;
        postprocess(&out, phi.grid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::State;

    fn mini_spec() -> NetworkSpec {
        NetworkSpec { widths: vec![1], in_channels: 1, out_channels: 1, input_size: None }
    }

    fn mini_net(conv1: [f32; 9]) -> UNet {
        let mut a = WeightArchive::zeros(&mini_spec());
        a.get_mut("enc1.conv1.weight").unwrap().data = conv1.to_vec();
        let mut id = [0.0; 9];
        id[4] = 1.0;
        a.get_mut("enc1.conv2.weight").unwrap().data = id.to_vec();
        a.get_mut("out.weight").unwrap().data = vec![1.0];
        UNet::from_archive(mini_spec(), &a).unwrap()
    }

    fn input4x4() -> Tensor {
        Tensor::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn default_parameter_count() {
        let count = NetworkSpec::default().parameter_count();
        assert_eq!(count, 31_032_386);
        assert!((count as f64 - 3.1e7).abs() < 0.05 * 3.1e7);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut k = [0.0; 9];
        k[4] = 1.0;
        let out = mini_net(k).forward(&input4x4()).unwrap();
        assert_eq!(out, input4x4());
    }

    #[test]
    fn box_kernel_shows_padding_halo() {
        // Sum over the 3x3 neighbourhood of 1..16 laid out row by row.
        let out = mini_net([1.0; 9]).forward(&input4x4()).unwrap();
        let expected = [
            14.0, 24.0, 30.0, 22.0, //
            33.0, 54.0, 63.0, 45.0, //
            57.0, 90.0, 99.0, 69.0, //
            46.0, 72.0, 78.0, 54.0,
        ];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn shifted_kernel_reads_the_left_neighbour() {
        // Weight at (ky, kx) = (1, 0) picks x[r][c - 1]; column 0 sees padding.
        let mut k = [0.0; 9];
        k[3] = 1.0;
        let out = mini_net(k).forward(&input4x4()).unwrap();
        for r in 0..4 {
            assert_eq!(out.get(r, 0, 0), 0.0);
            for c in 1..4 {
                assert_eq!(out.get(r, c, 0), input4x4().get(r, c - 1, 0));
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = NetworkSpec::with_base_width(4);
        let net = UNet::from_archive(spec, &WeightArchive::zeros(&NetworkSpec::with_base_width(4))).unwrap();
        let grid = Grid::shared(20.0, 32).unwrap();
        let phi = State::random(grid.clone(), 1);
        let out = net.forward(&prepare_input(&phi, &phi).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_conv_places_each_offset() {
        // 1 -> 1 channel, kernel [[1, 2], [3, 4]]: every input pixel v becomes
        // the 2x2 block v * kernel.
        let up = UpConv::new(&[1.0, 2.0, 3.0, 4.0], vec![0.5], 1, 1);
        let x = Act { c: 1, h: 1, w: 2, data: vec![1.0, 10.0] };
        let y = up.apply(&x);
        assert_eq!((y.h, y.w), (2, 4));
        assert_eq!(y.data, vec![1.5, 2.5, 10.5, 20.5, 3.5, 4.5, 30.5, 40.5]);
    }

    #[test]
    fn forward_is_deterministic_and_shape_preserving() {
        let spec = NetworkSpec::with_base_width(2);
        let net = UNet::from_archive(spec.clone(), &WeightArchive::random(&spec, 3)).unwrap();
        for n in [32, 64] {
            let grid = Grid::shared(20.0, n).unwrap();
            let phi = State::random(grid.clone(), 5);
            let input = prepare_input(&phi, &phi).unwrap();
            let a = net.forward(&input).unwrap();
            let b = net.forward(&input).unwrap();
            assert_eq!(a.shape(), (n, n, 2));
            assert_eq!(a, b);
        }
        let bad = Tensor::zeros(24, 24, 4);
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let spec = NetworkSpec::with_base_width(2);
        let a = WeightArchive::random(&spec, 9);
        let bytes = a.to_bytes();
        assert_eq!(WeightArchive::from_bytes(&bytes).unwrap(), a);
        assert_eq!(WeightArchive::from_bytes(&bytes).unwrap().to_bytes(), bytes);

        assert!(matches!(WeightArchive::from_bytes(&[]), Err(Error::Archive(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightArchive::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(WeightArchive::from_bytes(&bad).unwrap_err().to_string().contains("version"));
        assert!(WeightArchive::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn validation_names_the_bad_tensor() {
        let spec = NetworkSpec::with_base_width(2);
        let mut a = WeightArchive::zeros(&spec);
        let t = a.get_mut("dec2.conv1.weight").unwrap();
        t.dims = vec![4, 4, 3, 3];
        t.data.truncate(144);
        let err = a.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("dec2.conv1.weight"), "{err}");
    }

    #[test]
    fn input_channels_and_postprocess_round_trip() {
        let grid = Grid::shared(20.0, 32).unwrap();
        let real = Field::from_fn(grid.clone(), |x1, x2| Complex64::new((-(x1 * x1 + x2 * x2) / 2.0).exp(), 0.0));
        let g = State::random(grid.clone(), 2);
        let t = prepare_input(&real, &g).unwrap();
        assert_eq!(t.shape(), (32, 32, 4));
        assert!((0..32).all(|r| (0..32).all(|c| t.get(r, c, 1).abs() < 1e-15)));

        let phi = State::random(grid.clone(), 3);
        let t = prepare_input(&phi, &g).unwrap();
        let back = postprocess(&t.channels(0, 2).unwrap(), &grid).unwrap();
        assert!((&back - phi.as_field()).norm() < 1e-12);

        let zero = postprocess(&Tensor::zeros(32, 32, 2), &grid).unwrap();
        assert_eq!(zero.norm(), 0.0);
        let scaled = postprocess(&field_channels(&(phi.as_field() * 1.3)), &grid).unwrap();
        assert!((scaled.norm() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn sidecar_json() {
        let spec = NetworkSpec { input_size: Some(64), ..NetworkSpec::with_base_width(8) };
        assert_eq!(NetworkSpec::from_json(&spec.to_json()).unwrap(), spec);
        let trainer_style = r#"{"widths": [8, 16, 32, 64, 128], "input_size": 64, "batch_size": 16}"#;
        let parsed = NetworkSpec::from_json(trainer_style).unwrap();
        assert_eq!((parsed.in_channels, parsed.out_channels), (4, 2));
        assert!(NetworkSpec::from_json(r#"{"widths": [8, 16], "input_size": 63}"#).is_err());
    }
}
