use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, Tensor1, Tensor2};

/// Dimensions shared by every tensor of one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_inputs: usize,
    pub n_targets: usize,
}

impl Signature {
    pub fn new(embed_dim: usize, hidden_dim: usize, n_inputs: usize, n_targets: usize) -> Result<Self> {
        let s = Self {
            embed_dim,
            hidden_dim,
            n_inputs,
            n_targets,
        };
        if [embed_dim, hidden_dim, n_inputs, n_targets].contains(&0) {
            return Err(Error::Validation(format!("all model dimensions must be positive: {s:?}")));
        }
        Ok(s)
    }
}

/// Names of the twelve learnable tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    Embedding,
    UpdateInput,
    UpdateRecurrent,
    UpdateBias,
    ResetInput,
    ResetRecurrent,
    ResetBias,
    CandidateInput,
    CandidateRecurrent,
    CandidateBias,
    OutputWeight,
    OutputBias,
}

impl ParamId {
    pub const ALL: [ParamId; 12] = [
        ParamId::Embedding,
        ParamId::UpdateInput,
        ParamId::UpdateRecurrent,
        ParamId::UpdateBias,
        ParamId::ResetInput,
        ParamId::ResetRecurrent,
        ParamId::ResetBias,
        ParamId::CandidateInput,
        ParamId::CandidateRecurrent,
        ParamId::CandidateBias,
        ParamId::OutputWeight,
        ParamId::OutputBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "W_emb",
            ParamId::UpdateInput => "W_z",
            ParamId::UpdateRecurrent => "U_z",
            ParamId::UpdateBias => "b_z",
            ParamId::ResetInput => "W_r",
            ParamId::ResetRecurrent => "U_r",
            ParamId::ResetBias => "b_r",
            ParamId::CandidateInput => "W_h",
            ParamId::CandidateRecurrent => "U_h",
            ParamId::CandidateBias => "b_h",
            ParamId::OutputWeight => "W_o",
            ParamId::OutputBias => "b_o",
        }
    }

    /// Part of the recurrent transition (GRU gates).
    pub fn is_transition(self) -> bool {
        !matches!(self, ParamId::Embedding | ParamId::OutputWeight | ParamId::OutputBias)
    }

    pub fn is_output(self) -> bool {
        matches!(self, ParamId::OutputWeight | ParamId::OutputBias)
    }

    /// (rows, cols) of the tensor under `sig`; vectors are `(len, 1)`.
    pub fn shape(self, sig: &Signature) -> (usize, usize) {
        let (e, h, i, o) = (sig.embed_dim, sig.hidden_dim, sig.n_inputs, sig.n_targets);
        match self {
            ParamId::Embedding => (e, i),
            ParamId::UpdateInput | ParamId::ResetInput | ParamId::CandidateInput => (h, e),
            ParamId::UpdateRecurrent | ParamId::ResetRecurrent | ParamId::CandidateRecurrent => (h, h),
            ParamId::UpdateBias | ParamId::ResetBias | ParamId::CandidateBias => (h, 1),
            ParamId::OutputWeight => (o, h),
            ParamId::OutputBias => (o, 1),
        }
    }
}

/// All learnable tensors of the embedding → GRU → sigmoid predictor.
///
/// A parameter set is a model: the population model and every
/// patient-specific copy are values of this type. Gradients reuse the same
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    signature: Signature,
    pub w_emb: Tensor2,
    pub w_z: Tensor2,
    pub u_z: Tensor2,
    pub b_z: Tensor1,
    pub w_r: Tensor2,
    pub u_r: Tensor2,
    pub b_r: Tensor1,
    pub w_h: Tensor2,
    pub u_h: Tensor2,
    pub b_h: Tensor1,
    pub w_o: Tensor2,
    pub b_o: Tensor1,
}

impl ModelParameters {
    pub fn zeros(sig: Signature) -> Self {
        let m = |id: ParamId| {
            let (r, c) = id.shape(&sig);
            Tensor2::zeros(r, c)
        };
        let v = |id: ParamId| Tensor1::zeros(id.shape(&sig).0);
        Self {
            signature: sig,
            w_emb: m(ParamId::Embedding),
            w_z: m(ParamId::UpdateInput),
            u_z: m(ParamId::UpdateRecurrent),
            b_z: v(ParamId::UpdateBias),
            w_r: m(ParamId::ResetInput),
            u_r: m(ParamId::ResetRecurrent),
            b_r: v(ParamId::ResetBias),
            w_h: m(ParamId::CandidateInput),
            u_h: m(ParamId::CandidateRecurrent),
            b_h: v(ParamId::CandidateBias),
            w_o: m(ParamId::OutputWeight),
            b_o: v(ParamId::OutputBias),
        }
    }

    /// Matrices uniform in ±1/√fan_in, biases zero.
    pub fn init(sig: Signature, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(sig);
        for id in ParamId::ALL {
            let (rows, cols) = id.shape(&sig);
            if cols == 1 {
                continue;
            }
            let bound = 1.0 / (cols as f64).sqrt();
            debug_assert_eq!(p.tensor(id).len(), rows * cols);
            for v in p.tensor_mut(id) {
                *v = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn tensor(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Embedding => self.w_emb.as_slice(),
            ParamId::UpdateInput => self.w_z.as_slice(),
            ParamId::UpdateRecurrent => self.u_z.as_slice(),
            ParamId::UpdateBias => self.b_z.as_slice(),
            ParamId::ResetInput => self.w_r.as_slice(),
            ParamId::ResetRecurrent => self.u_r.as_slice(),
            ParamId::ResetBias => self.b_r.as_slice(),
            ParamId::CandidateInput => self.w_h.as_slice(),
            ParamId::CandidateRecurrent => self.u_h.as_slice(),
            ParamId::CandidateBias => self.b_h.as_slice(),
            ParamId::OutputWeight => self.w_o.as_slice(),
            ParamId::OutputBias => self.b_o.as_slice(),
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Embedding => self.w_emb.as_mut_slice(),
            ParamId::UpdateInput => self.w_z.as_mut_slice(),
            ParamId::UpdateRecurrent => self.u_z.as_mut_slice(),
            ParamId::UpdateBias => self.b_z.as_mut_slice(),
            ParamId::ResetInput => self.w_r.as_mut_slice(),
            ParamId::ResetRecurrent => self.u_r.as_mut_slice(),
            ParamId::ResetBias => self.b_r.as_mut_slice(),
            ParamId::CandidateInput => self.w_h.as_mut_slice(),
            ParamId::CandidateRecurrent => self.u_h.as_mut_slice(),
            ParamId::CandidateBias => self.b_h.as_mut_slice(),
            ParamId::OutputWeight => self.w_o.as_mut_slice(),
            ParamId::OutputBias => self.b_o.as_mut_slice(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        ParamId::ALL.iter().map(|&id| self.tensor(id).len()).sum()
    }

    /// Flat coordinate view, in `ParamId::ALL` order.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for id in ParamId::ALL {
            let t = self.tensor(id);
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for id in ParamId::ALL {
            let t = self.tensor_mut(id);
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        panic!("flat index out of range")
    }

    /// Which tensor and which offset a flat index falls in.
    pub fn locate_flat(&self, mut idx: usize) -> (ParamId, usize) {
        for id in ParamId::ALL {
            let n = self.tensor(id).len();
            if idx < n {
                return (id, idx);
            }
            idx -= n;
        }
        panic!("flat index out of range")
    }

    pub fn fill(&mut self, v: f64) {
        for id in ParamId::ALL {
            self.tensor_mut(id).iter_mut().for_each(|x| *x = v);
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) -> Result<()> {
        self.check_same_signature(other)?;
        for id in ParamId::ALL {
            for (a, &b) in self.tensor_mut(id).iter_mut().zip(other.tensor(id)) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for id in ParamId::ALL {
            self.tensor_mut(id).iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn check_same_signature(&self, other: &ModelParameters) -> Result<()> {
        if self.signature != other.signature {
            return Err(Error::dim("parameter signature", self.signature, other.signature));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for id in ParamId::ALL {
            check_finite(id.name(), self.tensor(id))?;
        }
        Ok(())
    }

    /// SHA-256 over the exact bit patterns of every tensor.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [
            self.signature.embed_dim,
            self.signature.hidden_dim,
            self.signature.n_inputs,
            self.signature.n_targets,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        for id in ParamId::ALL {
            for v in self.tensor(id) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

// --- checkpoint container ---------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"EVADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters bound to the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocabulary_hash: String,
    pub params: ModelParameters,
}

impl Checkpoint {
    /// Binary layout (little endian):
    /// magic, version u32, four dims u64, hash length u32 + utf8 bytes,
    /// then for each tensor in `ParamId::ALL` order: rows u64, cols u64, f64 bits.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let sig = self.params.signature();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for d in [sig.embed_dim, sig.hidden_dim, sig.n_inputs, sig.n_targets] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let hash = self.vocabulary_hash.as_bytes();
        w.write_all(&(hash.len() as u32).to_le_bytes())?;
        w.write_all(hash)?;
        for id in ParamId::ALL {
            let (r, c) = id.shape(&sig);
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            for v in self.params.tensor(id) {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let io = |e: std::io::Error| Error::Format(format!("checkpoint: truncated ({e})"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u64(&mut r).map_err(io)? as usize;
        }
        let sig = Signature::new(dims[0], dims[1], dims[2], dims[3])?;
        let hash_len = read_u32(&mut r).map_err(io)? as usize;
        if hash_len > 1024 {
            return Err(fmt("vocabulary hash too long"));
        }
        let mut hash = vec![0u8; hash_len];
        r.read_exact(&mut hash).map_err(io)?;
        let vocabulary_hash = String::from_utf8(hash).map_err(|_| fmt("hash is not utf8"))?;
        let mut params = ModelParameters::zeros(sig);
        for id in ParamId::ALL {
            let rows = read_u64(&mut r).map_err(io)? as usize;
            let cols = read_u64(&mut r).map_err(io)? as usize;
            if (rows, cols) != id.shape(&sig) {
                return Err(fmt(&format!(
                    "tensor {} has shape {rows}x{cols}, expected {:?}",
                    id.name(),
                    id.shape(&sig)
                )));
            }
            for v in params.tensor_mut(id) {
                *v = f64::from_bits(read_u64(&mut r).map_err(io)?);
            }
        }
        params.check_finite()?;
        Ok(Self {
            vocabulary_hash,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
