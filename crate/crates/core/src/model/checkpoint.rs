//! Versioned little-endian binary container for a [`TrainState`].
//!
//! Layout: magic, version, activation and head tags, layer shapes, class
//! count, step, seed, parameters, Adam settings and moments, then the RNG
//! seed, stream and word position. Floats are stored as raw bits.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Activation, Adam, ClassifierHead, DenseLayer, FeatureExtractor, HeadKind, Model, TrainState,
};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AIDGNCKP";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(
            self.take(16)?.try_into().expect("16 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn head_tag(kind: HeadKind) -> u8 {
    match kind {
        HeadKind::Cosine => 0,
        HeadKind::Linear => 1,
    }
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let model = &state.model;
    w.u8(model.extractor.activation.tag());
    w.u8(head_tag(model.head.kind));
    w.u32(model.extractor.layers.len());
    for l in &model.extractor.layers {
        w.u32(l.inputs);
        w.u32(l.outputs);
    }
    w.u32(model.head.rows.len());
    w.u64(state.step);
    w.u64(state.seed);
    for p in model.params() {
        w.f64s(p);
    }
    let opt = &state.optimizer;
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.u64(opt.t);
    for m in opt.first.iter().chain(&opt.second) {
        w.f64s(m);
    }
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let activation = Activation::from_tag(r.u8()?)
        .ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
    let kind = match r.u8()? {
        0 => HeadKind::Cosine,
        1 => HeadKind::Linear,
        t => return Err(Error::Checkpoint(format!("unknown head kind {t}"))),
    };
    let layer_count = r.u32()?;
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        shapes.push((r.u32()?, r.u32()?));
    }
    let classes = r.u32()?;
    let step = r.u64()?;
    let seed = r.u64()?;

    let mut layers = Vec::with_capacity(layer_count);
    for &(inputs, outputs) in &shapes {
        let weights = r.f64s(inputs * outputs)?;
        let bias = r.f64s(outputs)?;
        layers.push(DenseLayer {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    let extractor = FeatureExtractor::new(layers, activation)
        .map_err(|e| Error::Checkpoint(format!("inconsistent layers: {e}")))?;
    let latent = extractor.latent_dim();
    let rows = (0..classes)
        .map(|_| r.f64s(latent))
        .collect::<Result<Vec<_>>>()?;
    let model = Model {
        extractor,
        head: ClassifierHead { kind, rows },
    };

    let shapes = model.param_shapes();
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let t = r.u64()?;
    let first = shapes
        .iter()
        .map(|&n| r.f64s(n))
        .collect::<Result<Vec<_>>>()?;
    let second = shapes
        .iter()
        .map(|&n| r.f64s(n))
        .collect::<Result<Vec<_>>>()?;
    let optimizer = Adam {
        beta1,
        beta2,
        eps,
        first,
        second,
        t,
    };

    let rng_seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        model,
        optimizer,
        step,
        seed,
        rng,
    })
}

pub fn write_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    decode(&std::fs::read(path)?)
}
