//! Bit-exact binary checkpoints.
//!
//! Layout (all integers little-endian, all reals IEEE-754 binary64 little-endian):
//!
//! ```text
//! magic        4 bytes  "STEC"
//! version      u16
//! seed         u64      root seed of every random stream
//! epoch        u64      completed epochs
//! val_loss     f64
//! inputs       u32
//! layer count  u32
//! per layer:
//!   kind       u8       0 = dense, 1 = STE
//!   outputs    u32
//!   activation u8       0 = identity, 1 = relu, 2 = softmax
//!   has_out    u8       output dropout flag
//!   out_keep   f64      only if has_out = 1
//!   STE only:  averaging u32, keep f64, noise u8 (0 = dropout, 1 = dropconnect)
//! parameters   f64 arrays in model order (per branch: weights row-major, then bias)
//! has_opt      u8
//! if has_opt:  iteration u64, then velocity arrays in parameter order
//! ```
//!
//! All random streams are derived from `seed` plus the epoch and example
//! counters, so the seed and counters are the complete generator state.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, Noise, SteLayer};
use crate::model::{Layer, Model};
use crate::optimizer::OptState;
use crate::tensor::{Matrix, Vector};

pub const MAGIC: [u8; 4] = *b"STEC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub opt: Option<OptState>,
    pub epoch: u64,
    pub val_loss: f64,
    pub seed: u64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CheckpointTruncated { what }),
        }
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }
    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::CheckpointTruncated { what })?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn flag(&mut self, what: &'static str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::CheckpointCorrupt(format!("{what}: invalid flag {v}"))),
        }
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Softmax => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Softmax),
        c => Err(Error::CheckpointCorrupt(format!("unknown activation code {c}"))),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(&MAGIC);
        w.u16(FORMAT_VERSION);
        w.u64(self.seed);
        w.u64(self.epoch);
        w.f64(self.val_loss);
        w.u32(self.model.inputs());
        w.u32(self.model.layers.len());
        for layer in &self.model.layers {
            let (kind, out_keep) = match layer {
                Layer::Dense(d) => (0, d.output_keep),
                Layer::Ste(s) => (1, s.output_keep),
            };
            w.u8(kind);
            w.u32(layer.outputs());
            w.u8(activation_code(layer.activation()));
            w.u8(out_keep.is_some() as u8);
            if let Some(p) = out_keep {
                w.f64(p);
            }
            if let Layer::Ste(s) = layer {
                w.u32(s.averaging());
                w.f64(s.keep);
                w.u8(match s.noise {
                    Noise::Dropout => 0,
                    Noise::DropConnect => 1,
                });
            }
        }
        for p in self.model.params() {
            w.f64s(p);
        }
        match &self.opt {
            Some(opt) => {
                w.u8(1);
                w.u64(opt.iteration);
                for v in &opt.velocity {
                    w.f64s(v);
                }
            }
            None => w.u8(0),
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::CheckpointMagic { found: magic });
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let seed = r.u64("seed")?;
        let epoch = r.u64("epoch")?;
        let val_loss = r.f64("validation loss")?;
        let inputs = r.u32("input width")?;
        let n_layers = r.u32("layer count")?;

        struct Header {
            ste: Option<(usize, f64, Noise)>,
            outputs: usize,
            activation: Activation,
            out_keep: Option<f64>,
        }
        let mut headers = Vec::new();
        for _ in 0..n_layers {
            let kind = r.u8("layer kind")?;
            let outputs = r.u32("layer outputs")?;
            let activation = activation_from(r.u8("activation")?)?;
            let out_keep = if r.flag("output dropout flag")? {
                Some(r.f64("output keep")?)
            } else {
                None
            };
            let ste = match kind {
                0 => None,
                1 => {
                    let a = r.u32("averaging factor")?;
                    let keep = r.f64("keep probability")?;
                    let noise = match r.u8("noise mode")? {
                        0 => Noise::Dropout,
                        1 => Noise::DropConnect,
                        c => return Err(Error::CheckpointCorrupt(format!("unknown noise code {c}"))),
                    };
                    Some((a, keep, noise))
                }
                k => return Err(Error::CheckpointCorrupt(format!("unknown layer kind {k}"))),
            };
            headers.push(Header {
                ste,
                outputs,
                activation,
                out_keep,
            });
        }

        let mut layers = Vec::with_capacity(n_layers);
        let mut prev = inputs;
        for h in headers {
            let (n, m) = (h.outputs, prev);
            let read_branch = |r: &mut Reader| -> Result<(Matrix, Vector)> {
                let w = r.f64s(n.checked_mul(m).ok_or(Error::CheckpointTruncated { what: "weights" })?, "weights")?;
                let b = r.f64s(n, "bias")?;
                Ok((Matrix::from_vec(n, m, w)?, Vector::from_vec(b)))
            };
            let layer = match h.ste {
                None => {
                    let (w, b) = read_branch(&mut r)?;
                    Layer::Dense(DenseLayer {
                        weights: w,
                        bias: b,
                        activation: h.activation,
                        output_keep: h.out_keep,
                    })
                }
                Some((a, keep, noise)) => {
                    let mut weights = Vec::with_capacity(a.min(1024));
                    let mut biases = Vec::with_capacity(a.min(1024));
                    for _ in 0..a {
                        let (w, b) = read_branch(&mut r)?;
                        weights.push(w);
                        biases.push(b);
                    }
                    Layer::Ste(SteLayer {
                        weights,
                        biases,
                        keep,
                        noise,
                        activation: h.activation,
                        output_keep: h.out_keep,
                    })
                }
            };
            layers.push(layer);
            prev = n;
        }
        let model = Model::new(layers).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;

        let opt = if r.flag("optimizer flag")? {
            let iteration = r.u64("iteration")?;
            let velocity = model
                .param_lens()
                .into_iter()
                .map(|n| r.f64s(n, "velocity"))
                .collect::<Result<Vec<_>>>()?;
            Some(OptState { velocity, iteration })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            model,
            opt,
            epoch,
            val_loss,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
