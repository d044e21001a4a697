use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::infer::feature_dropout_indices;
use super::params::{decode_checkpoint, encode_checkpoint, trunc_normal, ParamSet, Tensor};
use super::{MilConfig, MilError};
use crate::rng::ChaCha8Rng;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;
/// Query rows per chunk in the memory-lean attention path.
const ATTN_CHUNK: usize = 256;

const W_IN: usize = 0;
const B_IN: usize = 1;
const CLS: usize = 2;
const PER_BLOCK: usize = 12;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const W_QKV: usize = 2;
const B_QKV: usize = 3;
const W_O: usize = 4;
const B_O: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W_1: usize = 8;
const B_1: usize = 9;
const W_2: usize = 10;
const B_2: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Final-normalized aggregation token.
    pub penultimate: Vec<f64>,
    /// One weight per retained tile, summing to one.
    pub attention: Vec<f64>,
    /// Indices (into the input bag) of the tiles that entered the forward.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub config: MilConfig,
    pub params: ParamSet,
}

struct BlockCache {
    xhat1: Array2<f64>,
    rstd1: Array1<f64>,
    a1: Array2<f64>,
    qkv: Array2<f64>,
    attn: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    o: Array2<f64>,
    xhat2: Array2<f64>,
    rstd2: Array1<f64>,
    a2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

struct Cache {
    x: Array2<f64>,
    blocks: Vec<BlockCache>,
    xhat_f: Array1<f64>,
    rstd_f: f64,
    c: Array1<f64>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * pdf
}

fn layer_norm(
    x: &Array2<f64>,
    g: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let e = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / e;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *r);
    }
    let out = &xhat * &g + &b;
    (out, xhat, rstd)
}

/// Returns `(dx, dgamma, dbeta)`.
fn layer_norm_backward(
    dout: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    g: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let e = dout.ncols() as f64;
    let dg = (dout * xhat).sum_axis(Axis(0));
    let db = dout.sum_axis(Axis(0));
    let dxhat = dout * &g;
    let mut dx = Array2::zeros(dout.raw_dim());
    for i in 0..dout.nrows() {
        let dh = dxhat.row(i);
        let xh = xhat.row(i);
        let s1 = dh.sum();
        let s2 = dh.dot(&xh);
        let r = rstd[i];
        for j in 0..dout.ncols() {
            dx[[i, j]] = r / e * (e * dh[j] - s1 - xh[j] * s2);
        }
    }
    (dx, dg, db)
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / sum).collect()
}

/// Weighted cross-entropy from logits.
fn cross_entropy(logits: &[f64], label: usize, weight: f64) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    weight * (lse - logits[label])
}

/// Aggregation-token row of a head's attention, restricted to tiles and
/// renormalized.
fn tile_weights(cls_row: ArrayView1<f64>) -> Array1<f64> {
    let tiles = cls_row.slice(s![1..]);
    let total = tiles.sum();
    tiles.mapv(|v| v / total)
}

impl MilModel {
    pub fn new(config: MilConfig, rng: &mut ChaCha8Rng) -> Result<Self, MilError> {
        config.validate()?;
        let (d, e, h, k) = (
            config.input_dim,
            config.embed_dim,
            config.hidden_dim(),
            config.n_classes,
        );
        let mut tensors = vec![
            Tensor::zeros("input.weight", &[d, e], true),
            Tensor::zeros("input.bias", &[e], true),
            Tensor::zeros("cls_token", &[e], false),
        ];
        for b in 0..config.depth {
            let name = |n: &str| format!("blocks.{b}.{n}");
            tensors.extend([
                Tensor::zeros(name("norm1.weight"), &[e], false),
                Tensor::zeros(name("norm1.bias"), &[e], false),
                Tensor::zeros(name("attn.qkv.weight"), &[e, 3 * e], true),
                Tensor::zeros(name("attn.qkv.bias"), &[3 * e], true),
                Tensor::zeros(name("attn.proj.weight"), &[e, e], true),
                Tensor::zeros(name("attn.proj.bias"), &[e], true),
                Tensor::zeros(name("norm2.weight"), &[e], false),
                Tensor::zeros(name("norm2.bias"), &[e], false),
                Tensor::zeros(name("mlp.fc1.weight"), &[e, h], true),
                Tensor::zeros(name("mlp.fc1.bias"), &[h], true),
                Tensor::zeros(name("mlp.fc2.weight"), &[h, e], true),
                Tensor::zeros(name("mlp.fc2.bias"), &[e], true),
            ]);
        }
        tensors.extend([
            Tensor::zeros("norm.weight", &[e], false),
            Tensor::zeros("norm.bias", &[e], false),
            Tensor::zeros("head.weight", &[e, k], true),
            Tensor::zeros("head.bias", &[k], true),
        ]);
        for t in &mut tensors {
            if t.name.ends_with("norm1.weight")
                || t.name.ends_with("norm2.weight")
                || t.name == "norm.weight"
            {
                t.data.iter_mut().for_each(|x| *x = 1.0);
            } else if t.name == "cls_token" || (t.shape.len() == 2 && t.name != "head.weight") {
                trunc_normal(&mut t.data, INIT_STD, rng);
            }
        }
        Ok(MilModel {
            config,
            params: ParamSet { tensors },
        })
    }

    /// Number of scalar parameters implied by a config.
    pub fn param_count(config: &MilConfig) -> usize {
        let (d, e, h, k) = (
            config.input_dim,
            config.embed_dim,
            config.hidden_dim(),
            config.n_classes,
        );
        let block = 2 * e + e * 3 * e + 3 * e + e * e + e + 2 * e + e * h + h + h * e + e;
        d * e + e + e + config.depth * block + 2 * e + e * k + k
    }

    fn blk(&self, b: usize, k: usize) -> usize {
        3 + PER_BLOCK * b + k
    }

    fn fin(&self, k: usize) -> usize {
        3 + PER_BLOCK * self.config.depth + k
    }

    fn check_bag(&self, tiles: ArrayView2<f32>) -> Result<(), MilError> {
        if tiles.nrows() == 0 {
            return Err(MilError::EmptyBag);
        }
        if tiles.ncols() != self.config.input_dim {
            return Err(MilError::DimMismatch {
                expected: self.config.input_dim,
                found: tiles.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass over a bag. Eval mode is deterministic and ignores `rng`;
    /// train mode applies feature dropout and attention dropout and requires it.
    pub fn forward(
        &self,
        tiles: ArrayView2<f32>,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, MilError> {
        self.check_bag(tiles)?;
        match mode {
            Mode::Eval => Ok(self.forward_eval(tiles.mapv(f64::from).view())),
            Mode::Train => {
                let rng =
                    rng.ok_or_else(|| MilError::InvalidConfig("train mode needs an rng".into()))?;
                let kept =
                    feature_dropout_indices(tiles.nrows(), self.config.feature_dropout_p, rng);
                let x = tiles.select(Axis(0), &kept).mapv(f64::from);
                let (mut out, _) = self.forward_cached(x.view(), Some(rng));
                out.kept = kept;
                Ok(out)
            }
        }
    }

    /// Weighted cross-entropy on `x` (no feature dropout). Attention dropout is
    /// active iff `rng` is given.
    pub fn loss(
        &self,
        x: ArrayView2<f64>,
        label: usize,
        weight: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let (out, _) = self.forward_cached(x, rng);
        cross_entropy(&out.logits, label, weight)
    }

    /// Loss and parameter gradient on `x` (no feature dropout).
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        label: usize,
        weight: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, ParamSet), MilError> {
        if label >= self.config.n_classes {
            return Err(MilError::BadLabel {
                label,
                n_classes: self.config.n_classes,
            });
        }
        if x.nrows() == 0 {
            return Err(MilError::EmptyBag);
        }
        let (out, cache) = self.forward_cached(x, rng);
        let loss = cross_entropy(&out.logits, label, weight);
        let mut dlogits = out.probs.clone();
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= weight);
        let mut grads = self.params.zeros_like();
        self.backward(&cache, &dlogits, &mut grads);
        Ok((loss, grads))
    }

    fn head(&self, z0: ArrayView1<f64>) -> (Array1<f64>, f64, Array1<f64>, Vec<f64>) {
        let p = &self.params;
        let row = z0.to_owned().insert_axis(Axis(0));
        let (c, xhat, rstd) = layer_norm(&row, p.vec(self.fin(0)), p.vec(self.fin(1)));
        let c = c.row(0).to_owned();
        let logits = c.dot(&p.mat(self.fin(2))) + p.vec(self.fin(3));
        (c, rstd[0], xhat.row(0).to_owned(), logits.to_vec())
    }

    fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let p = &self.params;
        let e = self.config.embed_dim;
        let h = x.dot(&p.mat(W_IN)) + p.vec(B_IN);
        let mut z = Array2::zeros((x.nrows() + 1, e));
        z.row_mut(0).assign(&p.vec(CLS));
        z.slice_mut(s![1.., ..]).assign(&h);
        z
    }

    fn mlp_residual(&self, b: usize, z_mid: &Array2<f64>) -> Array2<f64> {
        let p = &self.params;
        let (a2, _, _) = layer_norm(z_mid, p.vec(self.blk(b, LN2_G)), p.vec(self.blk(b, LN2_B)));
        let g = (a2.dot(&p.mat(self.blk(b, W_1))) + p.vec(self.blk(b, B_1))).mapv(gelu);
        z_mid + &(g.dot(&p.mat(self.blk(b, W_2))) + p.vec(self.blk(b, B_2)))
    }

    fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (ForwardOutput, Cache) {
        let p = &self.params;
        let cfg = &self.config;
        let (e, dh) = (cfg.embed_dim, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let keep = 1.0 - cfg.attention_dropout_p;
        let mut z = self.embed(x);
        let m = z.nrows();
        let mut blocks = Vec::with_capacity(cfg.depth);
        for b in 0..cfg.depth {
            let (a1, xhat1, rstd1) =
                layer_norm(&z, p.vec(self.blk(b, LN1_G)), p.vec(self.blk(b, LN1_B)));
            let qkv = a1.dot(&p.mat(self.blk(b, W_QKV))) + p.vec(self.blk(b, B_QKV));
            let mut o = Array2::zeros((m, e));
            let mut attn = Vec::with_capacity(cfg.heads);
            let mut masks = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let q = qkv.slice(s![.., hd * dh..(hd + 1) * dh]);
                let k = qkv.slice(s![.., e + hd * dh..e + (hd + 1) * dh]);
                let v = qkv.slice(s![.., 2 * e + hd * dh..2 * e + (hd + 1) * dh]);
                let mut a = q.dot(&k.t()) * scale;
                softmax_rows(&mut a);
                let mask = match rng.as_deref_mut() {
                    Some(r) if cfg.attention_dropout_p > 0.0 => {
                        Some(Array2::from_shape_simple_fn((m, m), || {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        }))
                    }
                    _ => None,
                };
                let out = match &mask {
                    Some(mk) => (&a * mk).dot(&v),
                    None => a.dot(&v),
                };
                o.slice_mut(s![.., hd * dh..(hd + 1) * dh]).assign(&out);
                attn.push(a);
                masks.push(mask);
            }
            let z_mid = &z + &(o.dot(&p.mat(self.blk(b, W_O))) + p.vec(self.blk(b, B_O)));
            let (a2, xhat2, rstd2) =
                layer_norm(&z_mid, p.vec(self.blk(b, LN2_G)), p.vec(self.blk(b, LN2_B)));
            let u = a2.dot(&p.mat(self.blk(b, W_1))) + p.vec(self.blk(b, B_1));
            let g = u.mapv(gelu);
            z = &z_mid + &(g.dot(&p.mat(self.blk(b, W_2))) + p.vec(self.blk(b, B_2)));
            blocks.push(BlockCache {
                xhat1,
                rstd1,
                a1,
                qkv,
                attn,
                masks,
                o,
                xhat2,
                rstd2,
                a2,
                u,
                g,
            });
        }
        let (c, rstd_f, xhat_f, logits) = self.head(z.row(0));
        let last = blocks.last().expect("depth >= 1");
        let mut attention = Array1::zeros(m - 1);
        for a in &last.attn {
            attention += &tile_weights(a.row(0));
        }
        attention /= cfg.heads as f64;
        let out = ForwardOutput {
            probs: softmax(&logits),
            logits,
            penultimate: c.to_vec(),
            attention: attention.to_vec(),
            kept: (0..m - 1).collect(),
        };
        (
            out,
            Cache {
                x: x.to_owned(),
                blocks,
                xhat_f,
                rstd_f,
                c,
            },
        )
    }

    fn backward(&self, cache: &Cache, dlogits: &[f64], grads: &mut ParamSet) {
        let p = &self.params;
        let cfg = &self.config;
        let (e, dh) = (cfg.embed_dim, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let m = cache.x.nrows() + 1;

        let dl = ArrayView1::from(dlogits);
        {
            let mut gw = grads.mat_mut(self.fin(2));
            gw += &(cache
                .c
                .view()
                .insert_axis(Axis(1))
                .dot(&dl.insert_axis(Axis(0))));
        }
        grads.vec_mut(self.fin(3)).zip_mut_with(&dl, |a, b| *a += b);
        let dc = p.mat(self.fin(2)).dot(&dl);
        let (dz0, dgf, dbf) = layer_norm_backward(
            &dc.insert_axis(Axis(0)),
            &cache.xhat_f.view().insert_axis(Axis(0)).to_owned(),
            &Array1::from_elem(1, cache.rstd_f),
            p.vec(self.fin(0)),
        );
        grads
            .vec_mut(self.fin(0))
            .zip_mut_with(&dgf, |a, b| *a += b);
        grads
            .vec_mut(self.fin(1))
            .zip_mut_with(&dbf, |a, b| *a += b);
        let mut dz = Array2::zeros((m, e));
        dz.row_mut(0).assign(&dz0.row(0));

        for b in (0..cfg.depth).rev() {
            let bc = &cache.blocks[b];
            let add_mat = |grads: &mut ParamSet, i: usize, g: Array2<f64>| {
                let mut gw = grads.mat_mut(i);
                gw += &g;
            };
            let add_vec = |grads: &mut ParamSet, i: usize, g: Array1<f64>| {
                grads.vec_mut(i).zip_mut_with(&g, |a, b| *a += b);
            };

            add_mat(grads, self.blk(b, W_2), bc.g.t().dot(&dz));
            add_vec(grads, self.blk(b, B_2), dz.sum_axis(Axis(0)));
            let mut du = dz.dot(&p.mat(self.blk(b, W_2)).t());
            du.zip_mut_with(&bc.u, |d, u| *d *= gelu_grad(*u));
            add_mat(grads, self.blk(b, W_1), bc.a2.t().dot(&du));
            add_vec(grads, self.blk(b, B_1), du.sum_axis(Axis(0)));
            let da2 = du.dot(&p.mat(self.blk(b, W_1)).t());
            let (dln2, dg2, db2) =
                layer_norm_backward(&da2, &bc.xhat2, &bc.rstd2, p.vec(self.blk(b, LN2_G)));
            add_vec(grads, self.blk(b, LN2_G), dg2);
            add_vec(grads, self.blk(b, LN2_B), db2);
            let dz_mid = dz + &dln2;

            add_mat(grads, self.blk(b, W_O), bc.o.t().dot(&dz_mid));
            add_vec(grads, self.blk(b, B_O), dz_mid.sum_axis(Axis(0)));
            let d_o = dz_mid.dot(&p.mat(self.blk(b, W_O)).t());
            let mut dqkv = Array2::zeros((m, 3 * e));
            for hd in 0..cfg.heads {
                let (qs, ks, vs) = (hd * dh, e + hd * dh, 2 * e + hd * dh);
                let q = bc.qkv.slice(s![.., qs..qs + dh]);
                let k = bc.qkv.slice(s![.., ks..ks + dh]);
                let v = bc.qkv.slice(s![.., vs..vs + dh]);
                let a = &bc.attn[hd];
                let d_oh = d_o.slice(s![.., qs..qs + dh]);
                let mut da = d_oh.dot(&v.t());
                let dv = match &bc.masks[hd] {
                    Some(mk) => {
                        da *= mk;
                        (a * mk).t().dot(&d_oh)
                    }
                    None => a.t().dot(&d_oh),
                };
                let rowdot = (&da * a).sum_axis(Axis(1));
                let mut ds = da;
                ds -= &rowdot.insert_axis(Axis(1));
                ds *= a;
                ds *= scale;
                dqkv.slice_mut(s![.., qs..qs + dh]).assign(&ds.dot(&k));
                dqkv.slice_mut(s![.., ks..ks + dh]).assign(&ds.t().dot(&q));
                dqkv.slice_mut(s![.., vs..vs + dh]).assign(&dv);
            }
            add_mat(grads, self.blk(b, W_QKV), bc.a1.t().dot(&dqkv));
            add_vec(grads, self.blk(b, B_QKV), dqkv.sum_axis(Axis(0)));
            let da1 = dqkv.dot(&p.mat(self.blk(b, W_QKV)).t());
            let (dln1, dg1, db1) =
                layer_norm_backward(&da1, &bc.xhat1, &bc.rstd1, p.vec(self.blk(b, LN1_G)));
            add_vec(grads, self.blk(b, LN1_G), dg1);
            add_vec(grads, self.blk(b, LN1_B), db1);
            dz = dz_mid + &dln1;
        }

        grads.vec_mut(CLS).zip_mut_with(&dz.row(0), |a, b| *a += b);
        let dh_in = dz.slice(s![1.., ..]);
        {
            let mut gw = grads.mat_mut(W_IN);
            gw += &cache.x.t().dot(&dh_in);
        }
        grads
            .vec_mut(B_IN)
            .zip_mut_with(&dh_in.sum_axis(Axis(0)), |a, b| *a += b);
    }

    /// Eval-mode forward that never materializes a full attention matrix: the
    /// inner blocks attend in row chunks and the last block only computes the
    /// aggregation-token row.
    fn forward_eval(&self, x: ArrayView2<f64>) -> ForwardOutput {
        let p = &self.params;
        let cfg = &self.config;
        let (e, dh) = (cfg.embed_dim, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut z = self.embed(x);
        let m = z.nrows();
        for b in 0..cfg.depth - 1 {
            let (a1, _, _) = layer_norm(&z, p.vec(self.blk(b, LN1_G)), p.vec(self.blk(b, LN1_B)));
            let qkv = a1.dot(&p.mat(self.blk(b, W_QKV))) + p.vec(self.blk(b, B_QKV));
            let mut o = Array2::zeros((m, e));
            for hd in 0..cfg.heads {
                let k = qkv.slice(s![.., e + hd * dh..e + (hd + 1) * dh]);
                let v = qkv.slice(s![.., 2 * e + hd * dh..2 * e + (hd + 1) * dh]);
                for r0 in (0..m).step_by(ATTN_CHUNK) {
                    let r1 = (r0 + ATTN_CHUNK).min(m);
                    let q = qkv.slice(s![r0..r1, hd * dh..(hd + 1) * dh]);
                    let mut a = q.dot(&k.t()) * scale;
                    softmax_rows(&mut a);
                    o.slice_mut(s![r0..r1, hd * dh..(hd + 1) * dh])
                        .assign(&a.dot(&v));
                }
            }
            let z_mid = &z + &(o.dot(&p.mat(self.blk(b, W_O))) + p.vec(self.blk(b, B_O)));
            z = self.mlp_residual(b, &z_mid);
        }

        let b = cfg.depth - 1;
        let (a1, _, _) = layer_norm(&z, p.vec(self.blk(b, LN1_G)), p.vec(self.blk(b, LN1_B)));
        let w = p.mat(self.blk(b, W_QKV));
        let bias = p.vec(self.blk(b, B_QKV));
        let q0 = a1.row(0).dot(&w.slice(s![.., ..e])) + bias.slice(s![..e]);
        let kv = a1.dot(&w.slice(s![.., e..])) + bias.slice(s![e..]);
        let mut o0 = Array1::zeros(e);
        let mut attention = Array1::zeros(m - 1);
        for hd in 0..cfg.heads {
            let k = kv.slice(s![.., hd * dh..(hd + 1) * dh]);
            let v = kv.slice(s![.., e + hd * dh..e + (hd + 1) * dh]);
            let mut a = (k.dot(&q0.slice(s![hd * dh..(hd + 1) * dh])) * scale).insert_axis(Axis(0));
            softmax_rows(&mut a);
            o0.slice_mut(s![hd * dh..(hd + 1) * dh])
                .assign(&a.row(0).dot(&v));
            attention += &tile_weights(a.row(0));
        }
        attention /= cfg.heads as f64;
        let z0_mid = (&z.row(0) + &(o0.dot(&p.mat(self.blk(b, W_O))) + p.vec(self.blk(b, B_O))))
            .insert_axis(Axis(0));
        let z0 = self.mlp_residual(b, &z0_mid);
        let (c, _, _, logits) = self.head(z0.row(0));
        ForwardOutput {
            probs: softmax(&logits),
            logits,
            penultimate: c.to_vec(),
            attention: attention.to_vec(),
            kept: (0..m - 1).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        encode_checkpoint(&config, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MilError> {
        let (config, tensors) = decode_checkpoint(bytes)?;
        let config: MilConfig = serde_json::from_str(&config)
            .map_err(|e| MilError::Checkpoint(format!("config: {e}")))?;
        let mut model = MilModel::new(config, &mut crate::rng::stream(0))?;
        if tensors.len() != model.params.tensors.len() {
            return Err(MilError::Checkpoint(format!(
                "{} tensors, config implies {}",
                tensors.len(),
                model.params.tensors.len()
            )));
        }
        for (t, (name, shape, data)) in model.params.tensors.iter_mut().zip(tensors) {
            if t.name != name || t.shape != shape {
                return Err(MilError::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match expected {} {:?}",
                    t.name, t.shape
                )));
            }
            t.data = data;
        }
        if !model.params.is_finite() {
            return Err(MilError::NonFinite("checkpoint parameters".into()));
        }
        Ok(model)
    }
}
