//! The geometry-aware view transformer.
//!
//! Recorded leads are encoded by a strided 1-D ResNet, modulated by FiLM
//! parameters generated from angle embeddings, fused per query by an
//! angle-only attention map through `L` gated blocks, and decoded back to
//! the time domain by an upsampling head with spectral-normalised convs.

mod config;

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

pub use config::{FilmMode, Fusion, ModelConfig};

use crate::autodiff::Var;
use crate::dipole::ViewAngle;
use crate::nn::checkpoint::load_into;
use crate::nn::spectral::power_iterate;
use crate::nn::{read_checkpoint, write_checkpoint, Binder, CheckpointError, ParamGroup, ParamId, ParamStore};
use crate::rng::Seed;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Angles and deviation slots for a set of leads. A slot indexes the
/// per-lead deviation table; `None` marks a virtual view without one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Views {
    pub angles: Vec<ViewAngle>,
    pub slots: Vec<Option<usize>>,
}

impl Views {
    pub fn new(angles: Vec<ViewAngle>, slots: Vec<Option<usize>>) -> Self {
        assert_eq!(angles.len(), slots.len(), "one slot per angle");
        Views { angles, slots }
    }

    pub fn virtual_views(angles: Vec<ViewAngle>) -> Self {
        let slots = vec![None; angles.len()];
        Views { angles, slots }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Views {
        Views {
            angles: idx.iter().map(|&i| self.angles[i]).collect(),
            slots: idx.iter().map(|&i| self.slots[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct EncBlock {
    conv1: Conv,
    conv2: Conv,
    skip: Conv,
}

#[derive(Debug, Clone)]
struct Film {
    hidden: Option<Lin>,
    gamma: Lin,
    beta: Lin,
}

#[derive(Debug, Clone)]
struct Block {
    fv: Conv,
    se1: Lin,
    se2: Lin,
    gate: ParamId,
}

#[derive(Debug, Clone)]
struct HeadStage {
    conv: Conv,
    u: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    factor: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    embed: Lin,
    deviation: ParamId,
    stem: Conv,
    encoder: Vec<EncBlock>,
    film: Option<Film>,
    wq: ParamId,
    wk: ParamId,
    fo0: Lin,
    blocks: Vec<Block>,
    head: Vec<HeadStage>,
    out: Conv,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: Seed,
}

impl<T: Scalar> Init<'_, T> {
    fn normal(&mut self, name: &str, group: ParamGroup, shape: &[usize], std: f64) -> ParamId {
        let mut rng = self.seed.named(name).rng();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal))).collect();
        self.store.add(name, group, Tensor::new(shape, data).expect("sized"))
    }

    fn fill(&mut self, name: &str, group: ParamGroup, shape: &[usize], v: f64) -> ParamId {
        self.store.add(name, group, Tensor::full(shape, T::lit(v)))
    }

    fn lin(&mut self, name: &str, group: ParamGroup, din: usize, dout: usize, gain: f64) -> Lin {
        Lin {
            w: self.normal(&format!("{name}.w"), group, &[din, dout], gain / (din as f64).sqrt()),
            b: self.fill(&format!("{name}.b"), group, &[dout], 0.0),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        group: ParamGroup,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv {
        let std = (2.0 / (cin * k) as f64).sqrt();
        Conv {
            w: self.normal(&format!("{name}.w"), group, &[cout, cin, k], std),
            b: self.fill(&format!("{name}.b"), group, &[cout, 1], 0.0),
            stride,
            padding,
        }
    }

    fn unit(&mut self, name: &str, n: usize) -> ParamId {
        let mut rng = self.seed.named(name).rng();
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        let data = v.into_iter().map(T::lit).collect();
        self.store.add(name, ParamGroup::Buffer, Tensor::new(&[n], data).expect("sized"))
    }
}

#[derive(Debug, Clone)]
pub struct GeoVtModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    ids: Ids,
}

impl<T: Scalar> GeoVtModel<T> {
    pub fn new(config: ModelConfig, seed: Seed) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            seed,
        };
        let c = config.channels;
        let d = config.embed_dim;
        use ParamGroup::*;

        let embed = init.lin("embed", AngleEmbedding, 4 * config.n_freq, d, 1.0);
        let deviation = init.fill("deviation", Deviation, &[config.n_slots, 2], 0.0);

        let f0 = config.upsample[0];
        let stem = init.conv("enc.stem", ViewEncoder, 1, c, 7, f0, 3);
        let encoder = config.upsample[1..]
            .iter()
            .enumerate()
            .map(|(j, &f)| EncBlock {
                conv1: init.conv(&format!("enc.block{j}.conv1"), ViewEncoder, c, c, 3, f, 1),
                conv2: init.conv(&format!("enc.block{j}.conv2"), ViewEncoder, c, c, 3, 1, 1),
                skip: init.conv(&format!("enc.block{j}.skip"), ViewEncoder, c, c, 1, f, 0),
            })
            .collect();
        let film = match config.film {
            FilmMode::Off => None,
            FilmMode::Query => Some(Film {
                hidden: None,
                gamma: init.lin("film.gamma", ViewEncoder, d, c, 0.1),
                beta: init.lin("film.beta", ViewEncoder, d, c, 0.1),
            }),
            FilmMode::QueryKey => Some(Film {
                hidden: Some(init.lin("film.hidden", ViewEncoder, 2 * d, d, 1.0)),
                gamma: init.lin("film.gamma", ViewEncoder, d, c, 0.1),
                beta: init.lin("film.beta", ViewEncoder, d, c, 0.1),
            }),
        };
        let da = config.attn_dim;
        let wq = init.normal("gaa.wq", GeoVt, &[d, da], 1.0 / (d as f64).sqrt());
        let wk = init.normal("gaa.wk", GeoVt, &[d, da], 1.0 / (d as f64).sqrt());
        let fo0 = init.lin("fo0", GeoVt, d, c, 1.0);
        let r = c / config.se_reduction;
        let blocks = (0..config.blocks)
            .map(|i| Block {
                fv: init.conv(&format!("block{i}.fv"), GeoVt, c, c, 1, 1, 0),
                se1: init.lin(&format!("block{i}.se1"), GeoVt, c, r, 1.0),
                se2: init.lin(&format!("block{i}.se2"), GeoVt, r, c, 1.0),
                gate: init.fill(&format!("block{i}.gate"), GeoVt, &[c, 1], 0.0),
            })
            .collect();
        let mut cin = c;
        let head = config
            .upsample
            .iter()
            .zip(&config.head_channels)
            .enumerate()
            .map(|(j, (&factor, &cout))| {
                let stage = HeadStage {
                    conv: init.conv(&format!("head.stage{j}.conv"), Head, cin, cout, 3, 1, 1),
                    u: init.unit(&format!("head.stage{j}.u"), cout),
                    ln_gamma: init.fill(&format!("head.stage{j}.ln_gamma"), Head, &[cout], 1.0),
                    ln_beta: init.fill(&format!("head.stage{j}.ln_beta"), Head, &[cout], 0.0),
                    factor,
                };
                cin = cout;
                stage
            })
            .collect();
        let out = init.conv("head.out", Head, cin, 1, 1, 1, 0);
        let ids = Ids {
            embed,
            deviation,
            stem,
            encoder,
            film,
            wq,
            wk,
            fo0,
            blocks,
            head,
            out,
        };
        Ok(GeoVtModel { config, store, ids })
    }

    pub fn deviation_id(&self) -> ParamId {
        self.ids.deviation
    }

    /// Fitted `(dθ, dφ)` in degrees for every slot.
    pub fn deviations(&self) -> Vec<(f64, f64)> {
        self.store
            .value(self.ids.deviation)
            .data()
            .chunks(2)
            .map(|c| (c[0].wide(), c[1].wide()))
            .collect()
    }

    pub fn set_deviations(&mut self, devs: &[(f64, f64)]) {
        let t = self.store.value_mut(self.ids.deviation);
        for (row, &(a, b)) in t.data_mut().chunks_mut(2).zip(devs) {
            row[0] = T::lit(a);
            row[1] = T::lit(b);
        }
    }

    pub fn reset_deviations(&mut self) {
        let t = self.store.value_mut(self.ids.deviation);
        t.data_mut().iter_mut().for_each(|x| *x = T::zero());
    }

    /// Sets every gate logit, e.g. `-inf` for closed gates.
    pub fn set_gate_logits(&mut self, value: f64) {
        for b in &self.ids.blocks {
            self.store
                .value_mut(b.gate)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = T::lit(value));
        }
    }

    /// Advances the persistent power-iteration vectors of the head.
    pub fn refresh_spectral(&mut self, n_iters: usize) {
        for stage in &self.ids.head {
            let w = self.store.value(stage.conv.w);
            let rows = w.shape()[0];
            let cols = w.numel() / rows;
            let mut u: Vec<f64> = self.store.value(stage.u).data().iter().map(|x| x.wide()).collect();
            power_iterate(w.data(), rows, cols, &mut u, n_iters);
            let dst = self.store.value_mut(stage.u);
            for (d, s) in dst.data_mut().iter_mut().zip(&u) {
                *d = T::lit(*s);
            }
        }
    }

    fn linear(&self, b: &mut Binder<T>, x: Var, l: Lin) -> Result<Var, TensorError> {
        let w = b.p(l.w);
        let bias = b.p(l.b);
        let y = b.graph.matmul(x, w)?;
        b.graph.add(y, bias)
    }

    fn conv(&self, b: &mut Binder<T>, x: Var, c: Conv) -> Result<Var, TensorError> {
        let w = b.p(c.w);
        let bias = b.p(c.b);
        let y = b.graph.conv1d(x, w, c.stride, c.padding)?;
        b.graph.add(y, bias)
    }

    /// Angle embeddings `[n, d]`, deviations added to slotted leads.
    pub fn embed(&self, b: &mut Binder<T>, views: &Views) -> Result<Var, ModelError> {
        let n = views.len();
        let nominal: Vec<f64> = views.angles.iter().flat_map(|a| [a.theta, a.phi]).collect();
        let nom = b.graph.constant(Tensor::from_f64(&[n, 2], &nominal)?);
        if let Some(bad) = views.slots.iter().flatten().find(|&&s| s >= self.config.n_slots) {
            return Err(ModelError::Input(format!("deviation slot {bad} out of range")));
        }
        let dev = b.p(self.ids.deviation);
        let d = b.graph.gather_rows(dev, &views.slots)?;
        let deg = b.graph.add(nom, d)?;
        let rad = b.graph.scale(deg, T::lit(std::f64::consts::PI / 180.0));
        let feats = b.graph.sinusoidal(rad, self.config.n_freq)?;
        Ok(self.linear(b, feats, self.ids.embed)?)
    }

    /// Backbone features `[l, c, t']` of recorded signals `[l, t]`.
    pub fn encode(&self, b: &mut Binder<T>, x: Var) -> Result<Var, ModelError> {
        let shape = b.graph.shape(x).to_vec();
        let [l, t] = shape[..] else {
            return Err(ModelError::Input(format!("recorded signals must be [l, t], got {shape:?}")));
        };
        let ds = self.config.downsample();
        if t % ds != 0 || t == 0 {
            return Err(ModelError::Input(format!("length {t} is not a positive multiple of {ds}")));
        }
        let x = b.graph.reshape(x, &[l, 1, t])?;
        let h = self.conv(b, x, self.ids.stem)?;
        let mut h = b.graph.gelu(h);
        for blk in &self.ids.encoder {
            let a = self.conv(b, h, blk.conv1)?;
            let a = b.graph.gelu(a);
            let a = self.conv(b, a, blk.conv2)?;
            let s = self.conv(b, h, blk.skip)?;
            let sum = b.graph.add(a, s)?;
            h = b.graph.gelu(sum);
        }
        Ok(h)
    }

    /// FiLM-modulated per-(query, lead) features `F_v⁰`: `[q, l, c, t']`,
    /// or `[1, l, c, t']` when modulation is off.
    pub fn modulate(&self, b: &mut Binder<T>, e: Var, fq: Var, fk: Var) -> Result<Var, ModelError> {
        let es = b.graph.shape(e).to_vec();
        let (l, c, tp) = (es[0], es[1], es[2]);
        let q = b.graph.shape(fq)[0];
        let e4 = b.graph.reshape(e, &[1, l, c, tp])?;
        let Some(film) = &self.ids.film else {
            return Ok(e4);
        };
        let (cond, gshape) = match film.hidden {
            None => (fq, vec![q, 1, c, 1]),
            Some(hidden) => {
                let qi: Vec<Option<usize>> = (0..q).flat_map(|i| std::iter::repeat_n(Some(i), l)).collect();
                let ki: Vec<Option<usize>> = (0..q).flat_map(|_| (0..l).map(Some)).collect();
                let fq_rep = b.graph.gather_rows(fq, &qi)?;
                let fk_rep = b.graph.gather_rows(fk, &ki)?;
                let pair = b.graph.concat(&[fq_rep, fk_rep], 1)?;
                let h = self.linear(b, pair, hidden)?;
                (b.graph.gelu(h), vec![q, l, c, 1])
            }
        };
        let g = self.linear(b, cond, film.gamma)?;
        let g = b.graph.add_scalar(g, T::one());
        let beta = self.linear(b, cond, film.beta)?;
        let g = b.graph.reshape(g, &gshape)?;
        let beta = b.graph.reshape(beta, &gshape)?;
        let scaled = b.graph.mul(e4, g)?;
        Ok(b.graph.add(scaled, beta)?)
    }

    /// Attention `[q, l]` over recorded leads; a function of angles only.
    pub fn gaa(&self, b: &mut Binder<T>, fq: Var, fk: Var) -> Result<Var, ModelError> {
        let q = b.graph.shape(fq)[0];
        let l = b.graph.shape(fk)[0];
        if self.config.fusion == Fusion::Mean {
            return Ok(b.graph.constant(Tensor::full(&[q, l], T::lit(1.0 / l as f64))));
        }
        let wq = b.p(self.ids.wq);
        let wk = b.p(self.ids.wk);
        let pq = b.graph.matmul(fq, wq)?;
        let pk = b.graph.matmul(fk, wk)?;
        let pkt = b.graph.transpose(pk)?;
        let s = b.graph.matmul(pq, pkt)?;
        let s = b.graph.scale(s, T::lit(1.0 / (self.config.attn_dim as f64).sqrt()));
        Ok(b.graph.softmax(s, 1)?)
    }

    /// Initial query state `F_o⁰`: `[q, c, 1]`, broadcast over time.
    pub fn initial_state(&self, b: &mut Binder<T>, fq: Var) -> Result<Var, ModelError> {
        let q = b.graph.shape(fq)[0];
        let fo = self.linear(b, fq, self.ids.fo0)?;
        Ok(b.graph.reshape(fo, &[q, self.config.channels, 1])?)
    }

    /// Attention-weighted sum over the lead axis: `[q, c, t']`.
    pub fn fuse(&self, b: &mut Binder<T>, fv: Var, gaa: Var) -> Result<Var, ModelError> {
        let gs = b.graph.shape(gaa).to_vec();
        let a = b.graph.reshape(gaa, &[gs[0], gs[1], 1, 1])?;
        let w = b.graph.mul(fv, a)?;
        Ok(b.graph.sum_axis(w, 1)?)
    }

    /// Squeeze-and-excitation over channels of a fused `[q, c, t']` map.
    pub fn extract(&self, b: &mut Binder<T>, block: usize, fused: Var) -> Result<Var, ModelError> {
        let blk = &self.ids.blocks[block];
        let s = b.graph.mean_axis(fused, 2)?;
        let z = self.linear(b, s, blk.se1)?;
        let z = b.graph.relu(z);
        let e = self.linear(b, z, blk.se2)?;
        let e = b.graph.sigmoid(e);
        let sh = b.graph.shape(e).to_vec();
        let e = b.graph.reshape(e, &[sh[0], sh[1], 1])?;
        Ok(b.graph.mul(fused, e)?)
    }

    /// One gated block: `F_o ⊙ (1 − G) + Ext(F_v × GAA) ⊙ G`, and the next
    /// `F_v` as a per-position channel projection.
    pub fn transform_block(
        &self,
        b: &mut Binder<T>,
        block: usize,
        fo: Var,
        fv: Var,
        gaa: Var,
    ) -> Result<(Var, Var), ModelError> {
        let blk = self.ids.blocks[block].clone();
        let fused = self.fuse(b, fv, gaa)?;
        let ext = self.extract(b, block, fused)?;
        let logits = b.p(blk.gate);
        let g = b.graph.sigmoid(logits);
        let keep = b.graph.one_minus(g);
        let a = b.graph.mul(fo, keep)?;
        let c = b.graph.mul(ext, g)?;
        let fo_next = b.graph.add(a, c)?;

        let shape = b.graph.shape(fv).to_vec();
        let (c_, tp) = (shape[2], shape[3]);
        let flat = b.graph.reshape(fv, &[shape[0] * shape[1], c_, tp])?;
        let proj = self.conv(b, flat, blk.fv)?;
        let fv_next = b.graph.reshape(proj, &shape)?;
        Ok((fo_next, fv_next))
    }

    /// Decodes `[q, c, t']` to `[q, t]`.
    pub fn reconstruct(&self, b: &mut Binder<T>, fo: Var) -> Result<Var, ModelError> {
        let mut h = fo;
        let store = b.store();
        for stage in &self.ids.head {
            h = b.graph.upsample_linear(h, stage.factor)?;
            let wt = store.value(stage.conv.w);
            let rows = wt.shape()[0];
            let cols = wt.numel() / rows;
            let mut u: Vec<f64> = store.value(stage.u).data().iter().map(|x| x.wide()).collect();
            let (v, _) = power_iterate(wt.data(), rows, cols, &mut u, 0);
            let w = b.p(stage.conv.w);
            let wn = b.graph.spectral_normalize(w, &u, &v)?;
            let bias = b.p(stage.conv.b);
            let y = b.graph.conv1d(h, wn, 1, 1)?;
            let y = b.graph.add(y, bias)?;
            let g = b.p(stage.ln_gamma);
            let be = b.p(stage.ln_beta);
            let y = b.graph.layer_norm(y, g, be, 1, 1e-5)?;
            h = b.graph.gelu(y);
        }
        let y = self.conv(b, h, self.ids.out)?;
        let s = b.graph.shape(y).to_vec();
        Ok(b.graph.reshape(y, &[s[0], s[2]])?)
    }

    /// Synthesises `[q, t]` query signals from recorded signals `[l, t]`.
    pub fn forward(&self, b: &mut Binder<T>, x: Var, recorded: &Views, query: &Views) -> Result<Var, ModelError> {
        if recorded.is_empty() || query.is_empty() {
            return Err(ModelError::Input("need at least one recorded lead and one query".into()));
        }
        if b.graph.shape(x)[0] != recorded.len() {
            return Err(ModelError::Input(format!(
                "{} recorded signals but {} recorded angles",
                b.graph.shape(x)[0],
                recorded.len()
            )));
        }
        let fk = self.embed(b, recorded)?;
        let fq = self.embed(b, query)?;
        let e = self.encode(b, x)?;
        let mut fv = self.modulate(b, e, fq, fk)?;
        let gaa = self.gaa(b, fq, fk)?;
        let mut fo = self.initial_state(b, fq)?;
        for i in 0..self.config.blocks {
            (fo, fv) = self.transform_block(b, i, fo, fv, gaa)?;
        }
        self.reconstruct(b, fo)
    }

    /// Inference on arbitrary lengths: signals are edge-padded to a
    /// multiple of the downsampling factor and queries run in chunks.
    pub fn synthesize(&self, signals: &Tensor<T>, recorded: &Views, query: &Views) -> Result<Tensor<T>, ModelError> {
        const CHUNK: usize = 16;
        let [l, t] = signals.shape()[..] else {
            return Err(ModelError::Input("recorded signals must be [l, t]".into()));
        };
        let ds = self.config.downsample();
        let tp = t.div_ceil(ds) * ds;
        let padded = if tp == t {
            signals.clone()
        } else {
            let mut data = Vec::with_capacity(l * tp);
            for i in 0..l {
                let row = signals.row(i);
                data.extend_from_slice(row);
                let last = *row.last().ok_or_else(|| ModelError::Input("empty signal".into()))?;
                data.extend(std::iter::repeat_n(last, tp - t));
            }
            Tensor::new(&[l, tp], data)?
        };
        let q = query.len();
        let mut out = Vec::with_capacity(q * t);
        for start in (0..q).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(q)).collect();
            let mut b = Binder::inference(&self.store);
            let x = b.graph.constant(padded.clone());
            let y = self.forward(&mut b, x, recorded, &query.subset(&idx))?;
            let yv = b.graph.value(y);
            for r in 0..idx.len() {
                out.extend_from_slice(&yv.row(r)[..t]);
            }
        }
        Ok(Tensor::new(&[q, t], out)?)
    }

    /// Attention map for the given angles, without any signal.
    pub fn attention(&self, recorded: &Views, query: &Views) -> Result<Tensor<T>, ModelError> {
        let mut b = Binder::inference(&self.store);
        let fk = self.embed(&mut b, recorded)?;
        let fq = self.embed(&mut b, query)?;
        let a = self.gaa(&mut b, fq, fk)?;
        Ok(b.graph.value(a).clone())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let extra = serde_json::json!({ "model": self.config });
        write_checkpoint(out, &self.store, &extra)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self, ModelError> {
        let (store, extra) = read_checkpoint::<T, _>(input)?;
        let config: ModelConfig = serde_json::from_value(extra["model"].clone())
            .map_err(|e| ModelError::Checkpoint(CheckpointError::Metadata(e)))?;
        let mut model = GeoVtModel::new(config, Seed(0))?;
        load_into(&mut model.store, &store)?;
        Ok(model)
    }

    pub fn cast<U: Scalar>(&self) -> GeoVtModel<U> {
        GeoVtModel {
            config: self.config.clone(),
            store: self.store.cast(),
            ids: self.ids.clone(),
        }
    }
}
