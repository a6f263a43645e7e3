//! Scoring models `f(u, i)` with hand-written gradients.
//!
//! Three kinds share one parameter container:
//!
//! * `Mf` scores by inner product and trains with BPR.
//! * `Ml` scores by negated squared Euclidean distance, trains with a hinge
//!   loss and keeps every vector inside the unit ball.
//! * `Dnn` feeds `[user; item]` through two rectifier layers of width `dim`
//!   and a linear output, trained with binary cross-entropy.
//!
//! Higher scores always mean "rank higher". Parameters are held in `f64`
//! for arithmetic but every stored value is representable in `f32`, so the
//! checkpoint format (little-endian `f32` blocks) round-trips bit-exactly.
//!
//! # Checkpoint layout
//!
//! ```text
//! HCMODEL v1 kind=<mf|ml|dnn> dim=<d> users=<U> items=<I> seed=<s>\n
//! user matrix    U*d f32, row-major
//! item matrix    I*d f32, row-major
//! (dnn only)
//! w1             d*(2d) f32, row-major, input = [user; item]
//! b1             d f32
//! w2             d*d f32, row-major
//! b2             d f32
//! w3             d f32
//! b3             1 f32
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ensemble::by_score_then_id;
use crate::error::{Error, Result};
use crate::metrics::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mf,
    Ml,
    Dnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::Ml => "ml",
            ModelKind::Dnn => "dnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(ModelKind::Mf),
            "ml" => Ok(ModelKind::Ml),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Two hidden rectifier layers of width `dim` over `[user; item]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl Mlp {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            w1: vec![0.0; dim * 2 * dim],
            b1: vec![0.0; dim],
            w2: vec![0.0; dim * dim],
            b2: vec![0.0; dim],
            w3: vec![0.0; dim],
            b3: 0.0,
        }
    }

    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Self::zeros(dim);
        let glorot = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Uniform::new_inclusive(-a, a)
        };
        let d1 = glorot(2 * dim, dim);
        mlp.w1.iter_mut().for_each(|w| *w = to_f32(d1.sample(rng)));
        let d2 = glorot(dim, dim);
        mlp.w2.iter_mut().for_each(|w| *w = to_f32(d2.sample(rng)));
        let d3 = glorot(dim, 1);
        mlp.w3.iter_mut().for_each(|w| *w = to_f32(d3.sample(rng)));
        mlp
    }

    fn blocks(&self) -> [&[f64]; 6] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w3,
            std::slice::from_ref(&self.b3),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            std::slice::from_mut(&mut self.b3),
        ]
    }

    fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `w1[:, :dim] · u + b1` for a user vector.
    fn user_projection(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| self.b1[r] + dot(&self.w1[r * 2 * d..r * 2 * d + d], u))
            .collect()
    }

    /// `w1[:, dim:] · v` for an item vector.
    fn item_projection(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| dot(&self.w1[r * 2 * d + d..(r + 1) * 2 * d], v))
            .collect()
    }

    /// Output given the first-layer pre-activation split into user and item parts.
    fn head(&self, pre_user: &[f64], pre_item: &[f64], hidden: &mut [f64]) -> f64 {
        let d = self.dim;
        for (h, (a, b)) in hidden.iter_mut().zip(pre_user.iter().zip(pre_item)) {
            *h = (a + b).max(0.0);
        }
        let mut out = self.b3;
        for r in 0..d {
            let z = self.b2[r] + dot(&self.w2[r * d..(r + 1) * d], hidden);
            if z > 0.0 {
                out += self.w3[r] * z;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Rounds to the nearest `f32` whose magnitude does not exceed `|x|`.
fn to_f32_toward_zero(x: f64) -> f64 {
    let f = x as f32;
    if (f as f64).abs() > x.abs() {
        f32::from_bits(f.to_bits() - 1) as f64
    } else {
        f as f64
    }
}

/// A user/item embedding model of one of the three kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub seed: u64,
    pub user_vectors: Vec<f64>,
    pub item_vectors: Vec<f64>,
    pub mlp: Option<Mlp>,
}

impl EmbeddingModel {
    /// Embeddings uniform in `[-0.5/dim, 0.5/dim]`; dense layers use Glorot
    /// uniform weights and zero biases.
    pub fn new(kind: ModelKind, num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 0.5 / dim as f64;
        let dist = Uniform::new_inclusive(-a, a);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| to_f32(dist.sample(&mut rng))).collect() };
        let user_vectors = draw(num_users * dim);
        let item_vectors = draw(num_items * dim);
        let mlp = (kind == ModelKind::Dnn).then(|| Mlp::init(dim, &mut rng));
        Self {
            kind,
            dim,
            num_users,
            num_items,
            seed,
            user_vectors,
            item_vectors,
            mlp,
        }
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_vectors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        assert!(u < self.num_users && i < self.num_items, "id out of range");
        let (uv, iv) = (self.user(u), self.item(i));
        match self.kind {
            ModelKind::Mf => dot(uv, iv),
            ModelKind::Ml => -uv.iter().zip(iv).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            ModelKind::Dnn => {
                let mlp = self.mlp.as_ref().expect("dnn model has dense layers");
                let mut hidden = vec![0.0; self.dim];
                mlp.head(&mlp.user_projection(uv), &mlp.item_projection(iv), &mut hidden)
            }
        }
    }

    /// Read-only scorer with per-item work cached; build once, share across
    /// threads.
    pub fn scorer(&self) -> Scorer<'_> {
        let item_proj = self.mlp.as_ref().map(|mlp| {
            (0..self.num_items)
                .flat_map(|i| mlp.item_projection(self.item(i)))
                .collect()
        });
        Scorer {
            model: self,
            item_proj,
        }
    }

    /// Top-`k` items by descending score with `exclude[i] == true` items
    /// skipped; ties go to the lower item id.
    pub fn rank_topk(&self, u: usize, exclude: &[bool], k: usize) -> RankedList {
        self.scorer().rank_topk(u, exclude, k)
    }

    /// Orders `items` by descending score (ties: lower id first).
    pub fn rank_items(&self, u: usize, items: &[usize]) -> RankedList {
        let mut scored: Vec<(usize, f64)> = items.iter().map(|&i| (i, self.score(u, i))).collect();
        scored.sort_by(|a, b| by_score_then_id(*a, *b));
        RankedList::from_sorted_unchecked(scored.into_iter().map(|(i, _)| i).collect())
    }

    /// Adds `g · ∂f(u,i)/∂θ` into `grads`.
    pub fn accumulate(&self, u: usize, i: usize, g: f64, grads: &mut Gradients) {
        let d = self.dim;
        match self.kind {
            ModelKind::Mf => {
                let (uv, iv) = (self.user(u), self.item(i));
                axpy(grads.user_row(u, d), g, iv);
                axpy(grads.item_row(i, d), g, uv);
            }
            ModelKind::Ml => {
                // f = -|u - v|^2
                let diff: Vec<f64> = self.user(u).iter().zip(self.item(i)).map(|(a, b)| a - b).collect();
                axpy(grads.user_row(u, d), -2.0 * g, &diff);
                axpy(grads.item_row(i, d), 2.0 * g, &diff);
            }
            ModelKind::Dnn => self.accumulate_mlp(u, i, g, grads),
        }
    }

    fn accumulate_mlp(&self, u: usize, i: usize, g: f64, grads: &mut Gradients) {
        let d = self.dim;
        let mlp = self.mlp.as_ref().expect("dnn model has dense layers");
        let (uv, iv) = (self.user(u), self.item(i));
        let pu = mlp.user_projection(uv);
        let pi = mlp.item_projection(iv);
        let z1: Vec<f64> = pu.iter().zip(&pi).map(|(a, b)| a + b).collect();
        let h1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
        let z2: Vec<f64> = (0..d)
            .map(|r| mlp.b2[r] + dot(&mlp.w2[r * d..(r + 1) * d], &h1))
            .collect();
        let h2: Vec<f64> = z2.iter().map(|z| z.max(0.0)).collect();

        let gm = grads.mlp.get_or_insert_with(|| Mlp::zeros(d));
        axpy(&mut gm.w3, g, &h2);
        gm.b3 += g;
        let dz2: Vec<f64> = (0..d)
            .map(|r| if z2[r] > 0.0 { g * mlp.w3[r] } else { 0.0 })
            .collect();
        let mut dh1 = vec![0.0; d];
        for r in 0..d {
            if dz2[r] == 0.0 {
                continue;
            }
            axpy(&mut gm.w2[r * d..(r + 1) * d], dz2[r], &h1);
            gm.b2[r] += dz2[r];
            axpy(&mut dh1, dz2[r], &mlp.w2[r * d..(r + 1) * d]);
        }
        let dz1: Vec<f64> = (0..d)
            .map(|r| if z1[r] > 0.0 { dh1[r] } else { 0.0 })
            .collect();
        let mut du = vec![0.0; d];
        let mut di = vec![0.0; d];
        for r in 0..d {
            if dz1[r] == 0.0 {
                continue;
            }
            let row = &mlp.w1[r * 2 * d..(r + 1) * 2 * d];
            let grow = &mut gm.w1[r * 2 * d..(r + 1) * 2 * d];
            axpy(&mut grow[..d], dz1[r], uv);
            axpy(&mut grow[d..], dz1[r], iv);
            gm.b1[r] += dz1[r];
            axpy(&mut du, dz1[r], &row[..d]);
            axpy(&mut di, dz1[r], &row[d..]);
        }
        axpy(grads.user_row(u, d), 1.0, &du);
        axpy(grads.item_row(i, d), 1.0, &di);
    }

    /// Adds `2·reg·θ` for every row touched by `grads` (and the dense layers
    /// if they carry a gradient).
    pub fn add_l2(&self, grads: &mut Gradients, reg: f64) {
        if reg == 0.0 {
            return;
        }
        for (&u, row) in grads.users.iter_mut() {
            axpy(row, 2.0 * reg, self.user(u));
        }
        for (&i, row) in grads.items.iter_mut() {
            axpy(row, 2.0 * reg, self.item(i));
        }
        if let (Some(gm), Some(mlp)) = (grads.mlp.as_mut(), self.mlp.as_ref()) {
            for (gb, pb) in gm.blocks_mut().into_iter().zip(mlp.blocks()) {
                axpy(gb, 2.0 * reg, pb);
            }
        }
    }

    /// `reg · Σ‖θ‖²` over the rows `grads` touches.
    pub fn l2_penalty(&self, grads: &Gradients, reg: f64) -> f64 {
        let rows: f64 = grads.users.keys().map(|&u| dot(self.user(u), self.user(u))).sum::<f64>()
            + grads.items.keys().map(|&i| dot(self.item(i), self.item(i))).sum::<f64>();
        let dense = match (&grads.mlp, &self.mlp) {
            (Some(_), Some(mlp)) => mlp.blocks().iter().flat_map(|b| b.iter()).map(|w| w * w).sum(),
            _ => 0.0,
        };
        reg * (rows + dense)
    }

    /// Plain SGD step `θ -= lr·g`. Metric-learning vectors are projected back
    /// into the unit ball; every value is then stored at `f32` precision.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        let d = self.dim;
        let project = self.kind == ModelKind::Ml;
        for (&u, g) in &grads.users {
            update_row(&mut self.user_vectors[u * d..(u + 1) * d], g, lr, project);
        }
        for (&i, g) in &grads.items {
            update_row(&mut self.item_vectors[i * d..(i + 1) * d], g, lr, project);
        }
        if let (Some(gm), Some(mlp)) = (grads.mlp.as_ref(), self.mlp.as_mut()) {
            for (pb, gb) in mlp.blocks_mut().into_iter().zip(gm.blocks()) {
                for (p, g) in pb.iter_mut().zip(gb) {
                    *p = to_f32(*p - lr * g);
                }
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.user_vectors.len() + self.item_vectors.len() + self.mlp.as_ref().map_or(0, Mlp::len)
    }

    /// Flat parameter access in checkpoint order.
    pub fn param(&self, idx: usize) -> f64 {
        let mut idx = idx;
        for block in self.blocks() {
            if idx < block.len() {
                return block[idx];
            }
            idx -= block.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut idx = idx;
        for block in self.blocks_mut() {
            if idx < block.len() {
                block[idx] = value;
                return;
            }
            idx -= block.len();
        }
        panic!("parameter index out of range");
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.user_vectors, &self.item_vectors];
        if let Some(mlp) = &self.mlp {
            v.extend(mlp.blocks());
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.user_vectors, &mut self.item_vectors];
        if let Some(mlp) = &mut self.mlp {
            v.extend(mlp.blocks_mut());
        }
        v
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn max_norm(&self) -> f64 {
        let d = self.dim;
        self.user_vectors
            .chunks(d)
            .chain(self.item_vectors.chunks(d))
            .map(|r| dot(r, r).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "HCMODEL v1 kind={} dim={} users={} items={} seed={}\n",
            self.kind, self.dim, self.num_users, self.num_items, self.seed
        );
        let mut out = header.into_bytes();
        for block in self.blocks() {
            for &x in block {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("HCMODEL") || fields.next() != Some("v1") {
            return Err(bad("not an HCMODEL v1 file"));
        }
        let mut kv = BTreeMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| bad("malformed header field"))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> Result<u64> {
            kv.get(k)
                .ok_or_else(|| bad(&format!("header lacks {k}")))?
                .parse()
                .map_err(|_| bad(&format!("header field {k} is not an integer")))
        };
        let kind: ModelKind = kv.get("kind").ok_or_else(|| bad("header lacks kind"))?.parse()?;
        let dim = num("dim")? as usize;
        let mut model = Self::new(kind, num("users")? as usize, num("items")? as usize, dim, num("seed")?);
        let body = &bytes[nl + 1..];
        if body.len() != model.num_params() * 4 {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                model.num_params() * 4,
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for block in model.blocks_mut() {
            for x in block.iter_mut() {
                *x = values.next().unwrap();
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn update_row(row: &mut [f64], g: &[f64], lr: f64, project: bool) {
    for (p, gi) in row.iter_mut().zip(g) {
        *p -= lr * gi;
    }
    if project {
        let norm = dot(row, row).sqrt();
        if norm > 1.0 {
            row.iter_mut().for_each(|p| *p /= norm);
        }
        row.iter_mut().for_each(|p| *p = to_f32_toward_zero(*p));
    } else {
        row.iter_mut().for_each(|p| *p = to_f32(*p));
    }
}

/// Sparse gradient: only rows that received signal are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
    pub mlp: Option<Mlp>,
}

impl Gradients {
    fn user_row(&mut self, u: usize, d: usize) -> &mut [f64] {
        self.users.entry(u).or_insert_with(|| vec![0.0; d])
    }

    fn item_row(&mut self, i: usize, d: usize) -> &mut [f64] {
        self.items.entry(i).or_insert_with(|| vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        self.users.values().chain(self.items.values()).flatten().all(|x| x.is_finite())
            && self
                .mlp
                .as_ref()
                .is_none_or(|m| m.blocks().iter().all(|b| b.iter().all(|x| x.is_finite())))
    }

    /// Dense vector in the model's flat parameter order.
    pub fn to_dense(&self, model: &EmbeddingModel) -> Vec<f64> {
        let d = model.dim;
        let mut out = vec![0.0; model.num_params()];
        for (&u, row) in &self.users {
            out[u * d..(u + 1) * d].copy_from_slice(row);
        }
        let off = model.user_vectors.len();
        for (&i, row) in &self.items {
            out[off + i * d..off + (i + 1) * d].copy_from_slice(row);
        }
        if let Some(gm) = &self.mlp {
            let mut off = off + model.item_vectors.len();
            for b in gm.blocks() {
                out[off..off + b.len()].copy_from_slice(b);
                off += b.len();
            }
        }
        out
    }
}

/// Shared read-only scoring view over a model.
pub struct Scorer<'a> {
    model: &'a EmbeddingModel,
    item_proj: Option<Vec<f64>>,
}

impl Scorer<'_> {
    pub fn model(&self) -> &EmbeddingModel {
        self.model
    }

    /// Scores of every item for user `u`.
    pub fn scores(&self, u: usize) -> Vec<f64> {
        let m = self.model;
        match (&m.mlp, &self.item_proj) {
            (Some(mlp), Some(proj)) => {
                let pu = mlp.user_projection(m.user(u));
                let mut hidden = vec![0.0; m.dim];
                proj.chunks(m.dim)
                    .map(|pi| mlp.head(&pu, pi, &mut hidden))
                    .collect()
            }
            _ => (0..m.num_items).map(|i| m.score(u, i)).collect(),
        }
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        match (&self.model.mlp, &self.item_proj) {
            (Some(mlp), Some(proj)) => {
                let d = self.model.dim;
                let mut hidden = vec![0.0; d];
                mlp.head(&mlp.user_projection(self.model.user(u)), &proj[i * d..(i + 1) * d], &mut hidden)
            }
            _ => self.model.score(u, i),
        }
    }

    pub fn rank_topk(&self, u: usize, exclude: &[bool], k: usize) -> RankedList {
        topk_from_scores(&self.scores(u), exclude, k)
    }
}

/// Top-`k` of a dense score vector, skipping `exclude[i] == true`.
pub fn topk_from_scores(scores: &[f64], exclude: &[bool], k: usize) -> RankedList {
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| !exclude.get(*i).copied().unwrap_or(false))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| by_score_then_id(*a, *b);
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    RankedList::from_sorted_unchecked(cand.into_iter().map(|(i, _)| i).collect())
}

/// Orders `items` by descending `scores[item]`, ties to the lower id.
pub fn order_by_scores(scores: &[f64], items: &[usize]) -> RankedList {
    let mut scored: Vec<(usize, f64)> = items.iter().map(|&i| (i, scores[i])).collect();
    scored.sort_by(|a, b| by_score_then_id(*a, *b));
    RankedList::from_sorted_unchecked(scored.into_iter().map(|(i, _)| i).collect())
}

/// `(user, positive item, negative item)`.
pub type Triple = (usize, usize, usize);

/// `(user, item, label)` with label in {0, 1}.
pub type LabeledPair = (usize, usize, f64);

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_kind(model: &EmbeddingModel, kind: ModelKind, op: &str) -> Result<()> {
    if model.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "{op} needs a {kind} model, got {}",
            model.kind
        )));
    }
    Ok(())
}

/// `Σ −log σ(f(u,i⁺) − f(u,i⁻)) + reg·Σ‖θ‖²` over the touched rows.
pub fn bpr_loss(model: &EmbeddingModel, triples: &[Triple], reg: f64) -> f64 {
    let data: f64 = triples
        .iter()
        .map(|&(u, i, j)| softplus(model.score(u, j) - model.score(u, i)))
        .sum();
    let mut touched = Gradients::default();
    for &(u, i, j) in triples {
        touched.user_row(u, model.dim);
        touched.item_row(i, model.dim);
        touched.item_row(j, model.dim);
    }
    data + model.l2_penalty(&touched, reg)
}

pub fn bpr_gradients(model: &EmbeddingModel, triples: &[Triple], reg: f64) -> Result<Gradients> {
    let mut grads = Gradients::default();
    for &(u, i, j) in triples {
        let x = model.score(u, i) - model.score(u, j);
        // d/dx softplus(-x) = -σ(-x)
        let g = -sigmoid(-x);
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { user: u, items: vec![i, j] });
        }
        model.accumulate(u, i, g, &mut grads);
        model.accumulate(u, j, -g, &mut grads);
    }
    model.add_l2(&mut grads, reg);
    if !grads.is_finite() {
        let (u, i, j) = triples[0];
        return Err(Error::NonFiniteGradient { user: u, items: vec![i, j] });
    }
    Ok(grads)
}

/// One BPR step on an MF model; returns the pre-step batch loss.
pub fn bpr_step(model: &mut EmbeddingModel, triples: &[Triple], lr: f64, reg: f64) -> Result<f64> {
    require_kind(model, ModelKind::Mf, "bpr_step")?;
    let loss = bpr_loss(model, triples, reg);
    let grads = bpr_gradients(model, triples, reg)?;
    model.apply(&grads, lr);
    Ok(loss)
}

/// `Σ max(0, margin + d(u,i⁺)² − d(u,i⁻)²)`.
pub fn hinge_loss(model: &EmbeddingModel, triples: &[Triple], margin: f64) -> f64 {
    triples
        .iter()
        .map(|&(u, i, j)| (margin - model.score(u, i) + model.score(u, j)).max(0.0))
        .sum()
}

pub fn hinge_gradients(model: &EmbeddingModel, triples: &[Triple], margin: f64) -> Result<Gradients> {
    let mut grads = Gradients::default();
    for &(u, i, j) in triples {
        let active = margin - model.score(u, i) + model.score(u, j);
        if !active.is_finite() {
            return Err(Error::NonFiniteGradient { user: u, items: vec![i, j] });
        }
        if active > 0.0 {
            model.accumulate(u, i, -1.0, &mut grads);
            model.accumulate(u, j, 1.0, &mut grads);
        }
    }
    Ok(grads)
}

/// One hinge step on an ML model followed by unit-ball projection of the
/// touched vectors; returns the pre-step batch loss.
pub fn hinge_step(model: &mut EmbeddingModel, triples: &[Triple], margin: f64, lr: f64) -> Result<f64> {
    require_kind(model, ModelKind::Ml, "hinge_step")?;
    if margin <= 0.0 {
        return Err(Error::InvalidArgument("hinge margin must be positive".into()));
    }
    let loss = hinge_loss(model, triples, margin);
    let grads = hinge_gradients(model, triples, margin)?;
    model.apply(&grads, lr);
    Ok(loss)
}

/// Binary cross-entropy of `σ(f(u,i))` against the labels.
pub fn bce_loss(model: &EmbeddingModel, pairs: &[LabeledPair]) -> f64 {
    pairs
        .iter()
        .map(|&(u, i, y)| {
            let s = model.score(u, i);
            y * softplus(-s) + (1.0 - y) * softplus(s)
        })
        .sum()
}

pub fn bce_gradients(model: &EmbeddingModel, pairs: &[LabeledPair]) -> Result<Gradients> {
    let mut grads = Gradients::default();
    for &(u, i, y) in pairs {
        let g = sigmoid(model.score(u, i)) - y;
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { user: u, items: vec![i] });
        }
        model.accumulate(u, i, g, &mut grads);
    }
    if !grads.is_finite() {
        let (u, i, _) = pairs[0];
        return Err(Error::NonFiniteGradient { user: u, items: vec![i] });
    }
    Ok(grads)
}

/// One BCE step on a DNN model; returns the pre-step batch loss.
pub fn mlp_step(model: &mut EmbeddingModel, pairs: &[LabeledPair], lr: f64) -> Result<f64> {
    require_kind(model, ModelKind::Dnn, "mlp_step")?;
    let loss = bce_loss(model, pairs);
    let grads = bce_gradients(model, pairs)?;
    model.apply(&grads, lr);
    Ok(loss)
}
