//! Forward and reverse passes of the regressor.

use log::warn;

use crate::error::{Error, Result};
use nalgebra::{Matrix3, SymmetricEigen};

use crate::geo::{fps_sample, knn_group, normalize_unit_sphere, PointCloud, UnitVec3, Vec3};
use crate::rng;
use crate::textenc::TextEmbedding;

use super::params::{AttnIdx, BlockIdx, Grads, ModelParams};
use super::tensor::{
    add_assign, gelu_backward, gelu_forward, gemm, layer_norm, layer_norm_backward, linear,
    linear_backward, softmax_rows, softmax_rows_backward, NormCache,
};
use super::{Fusion, ModelConfig};
use rand::Rng as _;

/// Patch-tokenizer input for one cloud: `n_patches * patch_size` rows of
/// `[point - center, center]`, plus the rotation from the frame the rows are
/// expressed in back to the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub input: Vec<f64>,
    pub n_patches: usize,
    pub patch_size: usize,
    pub frame: Matrix3<f64>,
}

/// Principal axes as columns, largest variance first. The first two axes
/// point toward the heavier third-moment tail; the third completes a
/// right-handed frame.
fn principal_frame(cloud: &PointCloud) -> Matrix3<f64> {
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / cloud.len() as f64);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = [Vec3::zeros(); 3];
    let mut confidence = [0.0; 3];
    for (k, axis) in axes.iter_mut().enumerate() {
        let e: Vec3 = eig.eigenvectors.column(order[k]).into();
        let skew: f64 = cloud.points().iter().map(|p| (p - c).dot(&e).powi(3)).sum::<f64>() / cloud.len() as f64;
        *axis = if skew < 0.0 { -e } else { e };
        // Scale-free skewness.
        confidence[k] = skew.abs() / eig.eigenvalues[order[k]].max(1e-300).powf(1.5);
    }
    // Restore handedness by flipping the axis whose sign is least certain.
    if axes[0].cross(&axes[1]).dot(&axes[2]) < 0.0 {
        let k = (0..3).min_by(|&a, &b| confidence[a].total_cmp(&confidence[b])).expect("three axes");
        axes[k] = -axes[k];
    }
    Matrix3::from_columns(&axes)
}

/// Resamples to `n_points` (farthest point sampling when larger, seeded
/// repetition when smaller), then groups around farthest-point centers.
pub fn prepare(config: &ModelConfig, cloud: &PointCloud) -> Result<Prepared> {
    config.validate()?;
    let mut cloud = match cloud.len().cmp(&config.n_points) {
        std::cmp::Ordering::Greater => cloud.subset(&fps_sample(cloud, config.n_points)?)?,
        std::cmp::Ordering::Less => {
            let mut r = rng::stream("pad", cloud.len() as u64);
            let mut idx: Vec<usize> = (0..cloud.len()).collect();
            while idx.len() < config.n_points {
                idx.push(r.random_range(0..cloud.len()));
            }
            cloud.subset(&idx)?
        }
        std::cmp::Ordering::Equal => cloud.clone(),
    };
    let frame = if config.canonicalize {
        let f = principal_frame(&cloud);
        let c = cloud.centroid();
        cloud = cloud.map(|p| f.transpose() * (p - c));
        f
    } else {
        Matrix3::identity()
    };
    let centers = fps_sample(&cloud, config.n_patches)?;
    let groups = knn_group(&cloud, &centers, config.patch_size)?;
    let pts = cloud.points();
    let mut input = Vec::with_capacity(config.n_patches * config.patch_size * 6);
    for (&c, group) in centers.iter().zip(&groups) {
        let center = pts[c];
        for &i in group {
            let off = pts[i] - center;
            input.extend_from_slice(&[off.x, off.y, off.z, center.x, center.y, center.z]);
        }
    }
    Ok(Prepared {
        input,
        n_patches: config.n_patches,
        patch_size: config.patch_size,
        frame,
    })
}

/// One supervised sample.
#[derive(Debug, Clone)]
pub struct Example {
    pub prepared: Prepared,
    pub text: TextEmbedding,
    pub target: UnitVec3,
}

impl Example {
    pub fn new(
        config: &ModelConfig,
        cloud: &PointCloud,
        phrase: &str,
        target: UnitVec3,
    ) -> Result<Example> {
        Ok(Example {
            prepared: prepare(config, cloud)?,
            text: config.embed(phrase)?,
            target,
        })
    }
}

/// `1 - cos(raw, target)`, in `[0, 2]`.
pub fn loss_cosine(raw: &[f64; 3], target: &UnitVec3) -> Result<f64> {
    Ok(loss_cosine_grad(raw, target)?.0)
}

/// Loss and its gradient with respect to `raw`.
pub fn loss_cosine_grad(raw: &[f64; 3], target: &UnitVec3) -> Result<(f64, [f64; 3])> {
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    if !(n > 1e-8) {
        return Err(Error::DegeneratePrediction(n));
    }
    let t = target.to_array();
    let dot = raw[0] * t[0] + raw[1] * t[1] + raw[2] * t[2];
    let cos = dot / n;
    let loss = (1.0 - cos).clamp(0.0, 2.0);
    let mut g = [0.0; 3];
    for i in 0..3 {
        g[i] = -(t[i] / n - dot * raw[i] / (n * n * n));
    }
    Ok((loss, g))
}

struct AttnCache {
    norm: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    lq: usize,
    lk: usize,
}

struct BlockCache {
    x_in: Vec<f64>,
    attn: AttnCache,
    cross: Option<AttnCache>,
    ln2: NormCache,
    b: Vec<f64>,
    h: Vec<f64>,
    ht: Vec<f64>,
    g: Vec<f64>,
}

struct Cache {
    h1: Vec<f64>,
    h1t: Vec<f64>,
    a1: Vec<f64>,
    argmax: Vec<u32>,
    p: Vec<f64>,
    blocks: Vec<BlockCache>,
    lnf: NormCache,
    f: Vec<f64>,
    hh: Vec<f64>,
    hht: Vec<f64>,
    hg: Vec<f64>,
}

/// Residual-branch multipliers per block: attention, cross-attention, MLP.
/// All ones outside training with drop path.
pub(crate) type BranchScales = [f64; 3];

struct Net<'a> {
    p: &'a ModelParams,
    c: &'a ModelConfig,
}

impl<'a> Net<'a> {
    fn t(&self, offset: usize, len: usize) -> &'a [f64] {
        self.p.slice(offset, len)
    }

    /// Backward of `x w (+ b)`, accumulating into `g`.
    #[allow(clippy::too_many_arguments)]
    fn lin_back(
        &self,
        x: &[f64],
        w: usize,
        b: Option<usize>,
        dy: &[f64],
        i: usize,
        o: usize,
        g: &mut Grads,
        need_dx: bool,
    ) -> Vec<f64> {
        let rows = x.len() / i;
        let wt = self.t(w, i * o);
        match b {
            Some(b) => {
                let (dw, db) = g.pair_mut(w, i * o, b, o);
                linear_backward(x, rows, wt, dy, i, o, dw, Some(db), need_dx)
            }
            None => linear_backward(x, rows, wt, dy, i, o, g.slice_mut(w, i * o), None, need_dx),
        }
    }

    fn ln_back(&self, dy: &[f64], gain: usize, bias: usize, cache: &NormCache, g: &mut Grads) -> Vec<f64> {
        let d = self.c.width;
        let (dg, db) = g.pair_mut(gain, d, bias, d);
        layer_norm_backward(dy, d, self.t(gain, d), cache, dg, db)
    }

    /// Pre-norm multi-head attention from `x` to `kv` (or to itself).
    fn attention(&self, idx: &AttnIdx, x: &[f64], kv: Option<&[f64]>) -> (Vec<f64>, AttnCache) {
        let d = self.c.width;
        let heads = self.c.heads;
        let dh = d / heads;
        let lq = x.len() / d;
        let (a, norm) = layer_norm(x, d, self.t(idx.norm_g, d), self.t(idx.norm_b, d));
        let src = kv.unwrap_or(&a);
        let lk = src.len() / d;
        let q = linear(&a, lq, self.t(idx.wq, d * d), Some(self.t(idx.bq, d)), d, d);
        let k = linear(src, lk, self.t(idx.wk, d * d), Some(self.t(idx.bk, d)), d, d);
        let v = linear(src, lk, self.t(idx.wv, d * d), Some(self.t(idx.bv, d)), d, d);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * lq * lk];
        let mut o = vec![0.0; lq * d];
        for h in 0..heads {
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(lq, dh, lk, scale, &q[h * dh..], d, false, &k[h * dh..], d, true, 0.0, p, lk);
            softmax_rows(p, lk);
            gemm(lq, lk, dh, 1.0, p, lk, false, &v[h * dh..], d, false, 0.0, &mut o[h * dh..], d);
        }
        let out = linear(&o, lq, self.t(idx.wo, d * d), Some(self.t(idx.bo, d)), d, d);
        let cache = AttnCache {
            norm,
            a,
            q,
            k,
            v,
            probs,
            o,
            lq,
            lk,
        };
        (out, cache)
    }

    /// Returns `(dx, dkv)`; `dkv` is empty for self-attention, where it is
    /// folded into `dx`.
    fn attention_backward(
        &self,
        idx: &AttnIdx,
        cache: &AttnCache,
        kv: Option<&[f64]>,
        dout: &[f64],
        g: &mut Grads,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.c.width;
        let heads = self.c.heads;
        let dh = d / heads;
        let (lq, lk) = (cache.lq, cache.lk);
        let d_o = self.lin_back(&cache.o, idx.wo, Some(idx.bo), dout, d, d, g, true);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; lq * d];
        let mut dk = vec![0.0; lk * d];
        let mut dv = vec![0.0; lk * d];
        let mut dp = vec![0.0; lq * lk];
        for h in 0..heads {
            let p = &cache.probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(lq, dh, lk, 1.0, &d_o[h * dh..], d, false, &cache.v[h * dh..], d, true, 0.0, &mut dp, lk);
            gemm(lk, lq, dh, 1.0, p, lk, true, &d_o[h * dh..], d, false, 0.0, &mut dv[h * dh..], d);
            let ds = softmax_rows_backward(p, &dp, lk);
            gemm(lq, lk, dh, scale, &ds, lk, false, &cache.k[h * dh..], d, false, 0.0, &mut dq[h * dh..], d);
            gemm(lk, lq, dh, scale, &ds, lk, true, &cache.q[h * dh..], d, false, 0.0, &mut dk[h * dh..], d);
        }
        let src: &[f64] = kv.unwrap_or(&cache.a);
        let mut da = self.lin_back(&cache.a, idx.wq, Some(idx.bq), &dq, d, d, g, true);
        let mut dsrc = self.lin_back(src, idx.wk, Some(idx.bk), &dk, d, d, g, true);
        let dsv = self.lin_back(src, idx.wv, Some(idx.bv), &dv, d, d, g, true);
        add_assign(&mut dsrc, &dsv);
        if kv.is_none() {
            add_assign(&mut da, &dsrc);
            dsrc = Vec::new();
        }
        let dx = self.ln_back(&da, idx.norm_g, idx.norm_b, &cache.norm, g);
        (dx, dsrc)
    }

    fn block(&self, idx: &BlockIdx, s: &mut [f64], p: &[f64], scales: BranchScales) -> BlockCache {
        let d = self.c.width;
        let x_in = s.to_vec();
        match self.c.fusion {
            Fusion::Addition => s.chunks_exact_mut(d).for_each(|r| add_assign(r, p)),
            Fusion::Multiplication => s.chunks_exact_mut(d).for_each(|r| {
                r.iter_mut().zip(p).for_each(|(x, t)| *x *= 1.0 + t)
            }),
            Fusion::Concat | Fusion::CrossAttention => {}
        }
        let (out, attn) = self.attention(&idx.attn, s, None);
        s.iter_mut().zip(&out).for_each(|(x, o)| *x += scales[0] * o);
        let cross = idx.cross.as_ref().map(|ci| {
            let (out, cache) = self.attention(ci, s, Some(p));
            s.iter_mut().zip(&out).for_each(|(x, o)| *x += scales[1] * o);
            cache
        });
        let rows = s.len() / d;
        let hidden = d * self.c.mlp_ratio;
        let (b, ln2) = layer_norm(s, d, self.t(idx.ln2_g, d), self.t(idx.ln2_b, d));
        let h = linear(&b, rows, self.t(idx.w1, d * hidden), Some(self.t(idx.b1, hidden)), d, hidden);
        let (g, ht) = gelu_forward(&h);
        let f = linear(&g, rows, self.t(idx.w2, hidden * d), Some(self.t(idx.b2, d)), hidden, d);
        s.iter_mut().zip(&f).for_each(|(x, o)| *x += scales[2] * o);
        BlockCache {
            x_in,
            attn,
            cross,
            ln2,
            b,
            h,
            ht,
            g,
        }
    }

    fn block_backward(
        &self,
        idx: &BlockIdx,
        cache: &BlockCache,
        ds: &mut [f64],
        p: &[f64],
        dp: &mut [f64],
        scales: BranchScales,
        g: &mut Grads,
    ) {
        let d = self.c.width;
        let hidden = d * self.c.mlp_ratio;

        let df: Vec<f64> = ds.iter().map(|x| x * scales[2]).collect();
        let dgel = self.lin_back(&cache.g, idx.w2, Some(idx.b2), &df, hidden, d, g, true);
        let dh = gelu_backward(&cache.h, &cache.ht, &dgel);
        let db = self.lin_back(&cache.b, idx.w1, Some(idx.b1), &dh, d, hidden, g, true);
        let dx = self.ln_back(&db, idx.ln2_g, idx.ln2_b, &cache.ln2, g);
        add_assign(ds, &dx);

        if let (Some(ci), Some(cc)) = (idx.cross.as_ref(), cache.cross.as_ref()) {
            let dout: Vec<f64> = ds.iter().map(|x| x * scales[1]).collect();
            let (dx, dkv) = self.attention_backward(ci, cc, Some(p), &dout, g);
            add_assign(ds, &dx);
            add_assign(dp, &dkv);
        }

        let dout: Vec<f64> = ds.iter().map(|x| x * scales[0]).collect();
        let (dx, _) = self.attention_backward(&idx.attn, &cache.attn, None, &dout, g);
        add_assign(ds, &dx);

        match self.c.fusion {
            Fusion::Addition => ds.chunks_exact(d).for_each(|r| add_assign(dp, r)),
            Fusion::Multiplication => {
                for (r, x) in ds.chunks_exact_mut(d).zip(cache.x_in.chunks_exact(d)) {
                    for j in 0..d {
                        dp[j] += r[j] * x[j];
                        r[j] *= 1.0 + p[j];
                    }
                }
            }
            Fusion::Concat | Fusion::CrossAttention => {}
        }
    }

    fn check_inputs(&self, prep: &Prepared, text: &TextEmbedding) -> Result<()> {
        if prep.n_patches != self.c.n_patches
            || prep.patch_size != self.c.patch_size
            || prep.input.len() != self.c.n_patches * self.c.patch_size * 6
        {
            return Err(Error::invalid(format!(
                "prepared input has {} patches of {}, model expects {} of {}",
                prep.n_patches, prep.patch_size, self.c.n_patches, self.c.patch_size
            )));
        }
        if text.dim() != self.c.text_dim {
            return Err(Error::invalid(format!(
                "text embedding has dimension {}, model expects {}",
                text.dim(),
                self.c.text_dim
            )));
        }
        Ok(())
    }

    fn forward(
        &self,
        prep: &Prepared,
        text: Option<&TextEmbedding>,
        scales: &[BranchScales],
    ) -> ([f64; 3], Cache) {
        let c = self.c;
        let l = &self.p.layout;
        let d = c.width;
        let (ns, k) = (c.n_patches, c.patch_size);
        let m = ns * k;

        let h1 = linear(&prep.input, m, self.t(l.patch_w1, 6 * d), Some(self.t(l.patch_b1, d)), 6, d);
        let (a1, h1t) = gelu_forward(&h1);
        let h2 = linear(&a1, m, self.t(l.patch_w2, d * d), Some(self.t(l.patch_b2, d)), d, d);
        let seq = if text.is_some() { c.seq_len() } else { 1 + ns };
        let mut s = vec![0.0; seq * d];
        s[..d].copy_from_slice(self.t(l.cls, d));
        let mut argmax = vec![0u32; ns * d];
        for gi in 0..ns {
            let tok = &mut s[(1 + gi) * d..(2 + gi) * d];
            let am = &mut argmax[gi * d..(gi + 1) * d];
            tok.copy_from_slice(&h2[gi * k * d..(gi * k + 1) * d]);
            for r in 1..k {
                let row = &h2[(gi * k + r) * d..(gi * k + r + 1) * d];
                for j in 0..d {
                    if row[j] > tok[j] {
                        tok[j] = row[j];
                        am[j] = r as u32;
                    }
                }
            }
        }

        let p = match text {
            Some(t) => linear(t.values(), 1, self.t(l.text_w, c.text_dim * d), None, c.text_dim, d),
            None => vec![0.0; d],
        };
        if c.fusion == Fusion::Concat && text.is_some() {
            s[(seq - 1) * d..].copy_from_slice(&p);
        }
        let blocks = l
            .blocks
            .iter()
            .zip(scales)
            .map(|(b, &sc)| {
                if text.is_none() {
                    self.block_text_free(b, &mut s, sc)
                } else {
                    self.block(b, &mut s, &p, sc)
                }
            })
            .collect();

        let (f, lnf) = layer_norm(&s[..d], d, self.t(l.lnf_g, d), self.t(l.lnf_b, d));
        let hid = c.head_hidden;
        let hh = linear(&f, 1, self.t(l.head_w1, d * hid), Some(self.t(l.head_b1, hid)), d, hid);
        let (hg, hht) = gelu_forward(&hh);
        let out = linear(&hg, 1, self.t(l.head_w2, hid * 3), Some(self.t(l.head_b2, 3)), hid, 3);
        let w = prep.frame * Vec3::new(out[0], out[1], out[2]);
        let raw = [w.x, w.y, w.z];
        let cache = Cache {
            h1,
            h1t,
            a1,
            argmax,
            p,
            blocks,
            lnf,
            f,
            hh,
            hht,
            hg,
        };
        (raw, cache)
    }

    /// A block with no text injection at all; the reference for the
    /// zero-text check.
    fn block_text_free(&self, idx: &BlockIdx, s: &mut [f64], scales: BranchScales) -> BlockCache {
        let no_text = Net { p: self.p, c: &ModelConfig { fusion: Fusion::Concat, ..self.c.clone() } };
        let mut idx = *idx;
        idx.cross = None;
        no_text.block(&idx, s, &[], scales)
    }

    fn backward(
        &self,
        prep: &Prepared,
        text: &TextEmbedding,
        cache: &Cache,
        draw: &[f64; 3],
        scales: &[BranchScales],
        g: &mut Grads,
    ) {
        let c = self.c;
        let l = &self.p.layout;
        let d = c.width;
        let hid = c.head_hidden;
        let (ns, k) = (c.n_patches, c.patch_size);
        let m = ns * k;
        let seq = c.seq_len();

        let dc = prep.frame.transpose() * Vec3::new(draw[0], draw[1], draw[2]);
        let dhg = self.lin_back(&cache.hg, l.head_w2, Some(l.head_b2), &[dc.x, dc.y, dc.z], hid, 3, g, true);
        let dhh = gelu_backward(&cache.hh, &cache.hht, &dhg);
        let df = self.lin_back(&cache.f, l.head_w1, Some(l.head_b1), &dhh, d, hid, g, true);
        let dz = self.ln_back(&df, l.lnf_g, l.lnf_b, &cache.lnf, g);

        let mut ds = vec![0.0; seq * d];
        ds[..d].copy_from_slice(&dz);
        let mut dp = vec![0.0; d];
        for ((bi, bc), &sc) in l.blocks.iter().zip(&cache.blocks).zip(scales).rev() {
            self.block_backward(bi, bc, &mut ds, &cache.p, &mut dp, sc, g);
        }
        add_assign(g.slice_mut(l.cls, d), &ds[..d]);
        if c.fusion == Fusion::Concat {
            add_assign(&mut dp, &ds[(seq - 1) * d..]);
        }
        self.lin_back(text.values(), l.text_w, None, &dp, c.text_dim, d, g, false);

        // Max pooling routes each token gradient to one row of its group.
        // Work on transposed copies so both updates stream contiguously.
        let w2 = self.t(l.patch_w2, d * d);
        let mut w2t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                w2t[j * d + i] = w2[i * d + j];
            }
        }
        let mut dw2t = vec![0.0; d * d];
        let mut da1 = vec![0.0; m * d];
        for gi in 0..ns {
            let dt = &ds[(1 + gi) * d..(2 + gi) * d];
            for j in 0..d {
                let v = dt[j];
                if v == 0.0 {
                    continue;
                }
                let r = gi * k + cache.argmax[gi * d + j] as usize;
                let a_row = &cache.a1[r * d..(r + 1) * d];
                for (x, a) in dw2t[j * d..(j + 1) * d].iter_mut().zip(a_row) {
                    *x += a * v;
                }
                let da_row = &mut da1[r * d..(r + 1) * d];
                for (x, w) in da_row.iter_mut().zip(&w2t[j * d..(j + 1) * d]) {
                    *x += w * v;
                }
            }
        }
        {
            let (dw2, db2) = g.pair_mut(l.patch_w2, d * d, l.patch_b2, d);
            for i in 0..d {
                for j in 0..d {
                    dw2[i * d + j] += dw2t[j * d + i];
                }
            }
            for gi in 0..ns {
                add_assign(db2, &ds[(1 + gi) * d..(2 + gi) * d]);
            }
        }
        let dh1 = gelu_backward(&cache.h1, &cache.h1t, &da1);
        self.lin_back(&prep.input, l.patch_w1, Some(l.patch_b1), &dh1, 6, d, g, false);
    }
}

fn unit_scales(c: &ModelConfig) -> Vec<BranchScales> {
    vec![[1.0; 3]; c.layers]
}

/// Raw (unnormalized) direction for a prepared cloud and phrase embedding.
pub fn forward(params: &ModelParams, prep: &Prepared, text: &TextEmbedding) -> Result<[f64; 3]> {
    let net = Net { p: params, c: &params.config };
    net.check_inputs(prep, text)?;
    Ok(net.forward(prep, Some(text), &unit_scales(&params.config)).0)
}

/// Forward pass with the text pathway removed entirely.
pub fn forward_text_free(params: &ModelParams, prep: &Prepared) -> Result<[f64; 3]> {
    let net = Net { p: params, c: &params.config };
    net.check_inputs(prep, &TextEmbedding::zeros(params.config.text_dim))?;
    Ok(net.forward(prep, None, &unit_scales(&params.config)).0)
}

/// Mean cosine loss over `batch` and its exact gradient.
///
/// Samples whose raw output norm is at most 1e-8 contribute loss 1 and no
/// gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[Example]) -> Result<(f64, Grads)> {
    let scales = vec![unit_scales(&params.config); batch.len()];
    loss_and_grad_scaled(params, batch, &scales)
}

pub(crate) fn loss_and_grad_scaled(
    params: &ModelParams,
    batch: &[Example],
    scales: &[Vec<BranchScales>],
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let net = Net { p: params, c: &params.config };
    let mut grads = Grads::zeros_like(params);
    let mut total = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (ex, sc) in batch.iter().zip(scales) {
        net.check_inputs(&ex.prepared, &ex.text)?;
        let (raw, cache) = net.forward(&ex.prepared, Some(&ex.text), sc);
        match loss_cosine_grad(&raw, &ex.target) {
            Ok((loss, g)) => {
                total += loss;
                let draw = [g[0] * inv, g[1] * inv, g[2] * inv];
                net.backward(&ex.prepared, &ex.text, &cache, &draw, sc, &mut grads);
            }
            Err(Error::DegeneratePrediction(n)) => {
                warn!("degenerate prediction (norm {n:e}); counting loss 1 with zero gradient");
                total += 1.0;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((total * inv, grads))
}

/// Unit direction for `phrase` on `cloud`. The cloud is normalized first.
pub fn predict(params: &ModelParams, cloud: &PointCloud, phrase: &str) -> Result<UnitVec3> {
    let text = params.config.embed(phrase)?;
    let norm = normalize_unit_sphere(cloud)?;
    let prep = prepare(&params.config, &norm.cloud)?;
    predict_embedded(params, &prep, &text)
}

pub fn predict_embedded(params: &ModelParams, prep: &Prepared, text: &TextEmbedding) -> Result<UnitVec3> {
    let raw = forward(params, prep, text)?;
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    if !(n > 1e-8) {
        return Err(Error::DegeneratePrediction(n));
    }
    UnitVec3::normalize(Vec3::new(raw[0], raw[1], raw[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointso::init_params;
    use rand::SeedableRng;

    fn small(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            n_points: 256,
            n_patches: 16,
            patch_size: 16,
            width: 32,
            layers: 2,
            heads: 4,
            head_hidden: 32,
            fusion,
            ..ModelConfig::default()
        }
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn batch(c: &ModelConfig) -> Vec<Example> {
        let phrases = ["handle", "pointing direction"];
        phrases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = UnitVec3::new(0.3, -0.5 + i as f64, 0.8).unwrap();
                Example::new(c, &random_cloud(300, i as u64), p, t).unwrap()
            })
            .collect()
    }

    /// Perturbed away from the init so gains and biases are generic.
    fn generic_params(c: &ModelConfig) -> ModelParams {
        let mut p = init_params(c, 7).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for v in p.values_mut() {
            *v += r.random_range(-0.05..0.05);
        }
        p
    }

    fn max_fd_error(fusion: Fusion) -> (f64, usize) {
        let c = small(fusion);
        let b = batch(&c);
        let mut p = generic_params(&c);
        let (_, g) = loss_and_grad(&p, &b).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut coords = Vec::new();
        for t in p.tensors() {
            for _ in 0..t.len().min(6) {
                coords.push(t.offset + r.random_range(0..t.len()));
            }
        }
        while coords.len() < 1200 {
            coords.push(r.random_range(0..p.len()));
        }
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let w = p.values()[i];
            p.values_mut()[i] = w + h;
            let lp = loss_and_grad(&p, &b).unwrap().0;
            p.values_mut()[i] = w - h;
            let lm = loss_and_grad(&p, &b).unwrap().0;
            p.values_mut()[i] = w;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.values[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        (worst, coords.len())
    }

    #[test]
    fn gradients_match_finite_differences() {
        for f in Fusion::ALL {
            let (err, n) = max_fd_error(f);
            eprintln!("{f:?}: max rel err {err:e} over {n}");
            assert!(n >= 1000);
            assert!(err < 1e-4, "{f:?}: {err}");
        }
    }

    #[test]
    fn zero_text_addition_matches_text_free() {
        let c = small(Fusion::Addition);
        let p = generic_params(&c);
        let prep = prepare(&c, &random_cloud(300, 3)).unwrap();
        let a = forward(&p, &prep, &TextEmbedding::zeros(c.text_dim)).unwrap();
        let b = forward_text_free(&p, &prep).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_bounds_and_scale_invariance() {
        let t = UnitVec3::new(1.0, 2.0, -0.5).unwrap();
        assert!(loss_cosine(&t.to_array(), &t).unwrap().abs() < 1e-12);
        let n = t.neg().to_array();
        assert!((loss_cosine(&n, &t).unwrap() - 2.0).abs() < 1e-12);
        assert!((loss_cosine(&[2.0, -1.0, 0.0], &t).unwrap() - 1.0).abs() < 1e-12);
        let raw = [0.3, -0.7, 0.2];
        let l = loss_cosine(&raw, &t).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let l2 = loss_cosine(&[raw[0] * s, raw[1] * s, raw[2] * s], &t).unwrap();
            assert!((l - l2).abs() < 1e-9);
        }
        assert!(matches!(loss_cosine(&[0.0; 3], &t), Err(Error::DegeneratePrediction(_))));
    }

    #[test]
    fn duplicated_batch_is_a_no_op() {
        let c = small(Fusion::Concat);
        let p = generic_params(&c);
        let b = batch(&c);
        let mut bb = b.clone();
        bb.extend(b.iter().cloned());
        let (l1, g1) = loss_and_grad(&p, &b).unwrap();
        let (l2, g2) = loss_and_grad(&p, &bb).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_output_is_finite_and_nonzero() {
        for seed in 0..100 {
            let c = small(Fusion::Addition);
            let p = init_params(&c, seed).unwrap();
            let prep = prepare(&c, &random_cloud(256, seed)).unwrap();
            let raw = forward(&p, &prep, &c.embed("top").unwrap()).unwrap();
            let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
            assert!(raw.iter().all(|v| v.is_finite()) && n > 1e-6, "seed {seed}: {n}");
        }
    }

    #[test]
    fn point_order_does_not_matter() {
        let c = small(Fusion::CrossAttention);
        let p = generic_params(&c);
        let cloud = random_cloud(256, 11);
        let mut pts = cloud.points().to_vec();
        pts.reverse();
        pts.rotate_left(37);
        let shuffled = PointCloud::new(pts).unwrap();
        let a = predict(&p, &cloud, "handle").unwrap();
        let b = predict(&p, &shuffled, "handle").unwrap();
        assert!(angular_err(&a, &b) < 1e-6);
    }

    fn angular_err(a: &UnitVec3, b: &UnitVec3) -> f64 {
        (a.as_vec() - b.as_vec()).norm()
    }

    #[test]
    fn padding_and_downsampling_reach_n_points() {
        let c = small(Fusion::Addition);
        for n in [40, 256, 900] {
            let prep = prepare(&c, &random_cloud(n, n as u64)).unwrap();
            assert_eq!(prep.input.len(), 16 * 16 * 6);
        }
    }

    #[test]
    fn wrong_text_dim_is_rejected() {
        let c = small(Fusion::Addition);
        let p = init_params(&c, 0).unwrap();
        let prep = prepare(&c, &random_cloud(256, 0)).unwrap();
        assert!(matches!(forward(&p, &prep, &TextEmbedding::zeros(3)), Err(Error::InvalidArgument(_))));
    }
}
