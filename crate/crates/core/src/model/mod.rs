//! The recurrent scorer: item input (three embedding modes), stacked GRU
//! layers with hand-written single-step backpropagation, and dot-product
//! scoring against output item embeddings.
//!
//! Weight layout is row-vector oriented: a layer computes
//! `gates = x·W + h·U + b` with `W: in × 3H`, `U: H × 3H`, `b: 1 × 3H`.
//! The three gate blocks are stacked as `[reset | update | candidate]`, and
//! the state update is `h' = (1 - z)⊙h + z⊙h̃`.

mod activation;
mod dropout;

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faults::{self, Fault};
use crate::tensor::{axpy, dot, matmul, matmul_nt, matmul_nt_rows, matmul_tn_acc, Matrix, Real};

pub use activation::{softmax_in_place, FinalActivation, SELU_ALPHA, SELU_SCALE};
pub use dropout::{apply_dropout, dropout_mask, DropoutMasks};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("item index {item} out of range for {n_items} items")]
    ItemOutOfRange { item: u32, n_items: usize },
    #[error("dropout probability must be in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("shared embedding needs embedding size {hidden} (last layer size), got {embedding}")]
    SharedDim { embedding: usize, hidden: usize },
    #[error("model needs at least one layer and positive sizes")]
    BadShape,
    #[error("hidden state shape does not match the batch: {0}")]
    StateShape(String),
}

/// How items enter the first GRU layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingMode {
    /// One-hot input realised by indexing rows of the first layer's `W`.
    None,
    /// A dedicated input table of the given width.
    Separate(usize),
    /// The output scoring table doubles as the input table.
    Shared,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingMode::None => f.write_str("none"),
            EmbeddingMode::Separate(d) => write!(f, "separate({d})"),
            EmbeddingMode::Shared => f.write_str("shared"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub layers: Vec<usize>,
    pub embedding: EmbeddingMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_items == 0 || self.layers.is_empty() || self.layers.contains(&0) {
            return Err(ModelError::BadShape);
        }
        if let EmbeddingMode::Separate(0) = self.embedding {
            return Err(ModelError::BadShape);
        }
        Ok(())
    }

    pub fn top_size(&self) -> usize {
        *self.layers.last().expect("validated")
    }

    /// Width of the first layer's input.
    pub fn input_size(&self) -> usize {
        match self.embedding {
            EmbeddingMode::None => self.n_items,
            EmbeddingMode::Separate(d) => d,
            EmbeddingMode::Shared => self.top_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<F> {
    pub w: Matrix<F>,
    pub u: Matrix<F>,
    pub b: Matrix<F>,
}

impl<F: Real> GruLayer<F> {
    pub fn hidden_size(&self) -> usize {
        self.u.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ItemTables<F> {
    NoEmbedding { output: Matrix<F> },
    Separate { input: Matrix<F>, output: Matrix<F> },
    Shared { table: Matrix<F> },
}

/// Whether a parameter receives dense gradients or only a few touched rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Dense,
    Rows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gru4Rec<F> {
    config: ModelConfig,
    tables: ItemTables<F>,
    layers: Vec<GruLayer<F>>,
}

fn glorot<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        F::from_f64_lossy(rng.random_range(-bound..=bound))
    })
}

/// Stacks three independently initialised `rows × h` gate blocks side by side.
fn glorot_gates<F: Real, R: Rng + ?Sized>(rows: usize, h: usize, rng: &mut R) -> Matrix<F> {
    let blocks: Vec<Matrix<F>> = (0..3).map(|_| glorot(rows, h, rng)).collect();
    Matrix::from_fn(rows, 3 * h, |r, c| blocks[c / h].get(r, c % h))
}

impl<F: Real> Gru4Rec<F> {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let v = config.n_items;
        let top = config.top_size();
        let tables = match config.embedding {
            EmbeddingMode::None => ItemTables::NoEmbedding {
                output: glorot(v, top, rng),
            },
            EmbeddingMode::Separate(d) => {
                let input = glorot(v, d, rng);
                ItemTables::Separate {
                    input,
                    output: glorot(v, top, rng),
                }
            }
            EmbeddingMode::Shared => ItemTables::Shared {
                table: glorot(v, top, rng),
            },
        };
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut in_dim = config.input_size();
        for &h in &config.layers {
            layers.push(GruLayer {
                w: glorot_gates(in_dim, h, rng),
                u: glorot_gates(h, h, rng),
                b: Matrix::zeros(1, 3 * h),
            });
            in_dim = h;
        }
        Ok(Gru4Rec {
            config,
            tables,
            layers,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        let mut m = Self::init(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for p in m.params_mut() {
            p.fill(F::zero());
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn layers(&self) -> &[GruLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [GruLayer<F>] {
        &mut self.layers
    }

    /// Input embedding table; `None` in no-embedding mode.
    pub fn input_table(&self) -> Option<&Matrix<F>> {
        match &self.tables {
            ItemTables::NoEmbedding { .. } => None,
            ItemTables::Separate { input, .. } => Some(input),
            ItemTables::Shared { table } => Some(table),
        }
    }

    pub fn output_table(&self) -> &Matrix<F> {
        match &self.tables {
            ItemTables::NoEmbedding { output } | ItemTables::Separate { output, .. } => output,
            ItemTables::Shared { table } => table,
        }
    }

    pub fn output_table_mut(&mut self) -> &mut Matrix<F> {
        match &mut self.tables {
            ItemTables::NoEmbedding { output } | ItemTables::Separate { output, .. } => output,
            ItemTables::Shared { table } => table,
        }
    }

    pub fn input_table_mut(&mut self) -> Option<&mut Matrix<F>> {
        match &mut self.tables {
            ItemTables::NoEmbedding { .. } => None,
            ItemTables::Separate { input, .. } => Some(input),
            ItemTables::Shared { table } => Some(table),
        }
    }

    /// Parameter names in canonical order (matches [`Self::params`]).
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match self.tables {
            ItemTables::NoEmbedding { .. } => vec!["output_embedding".into()],
            ItemTables::Separate { .. } => {
                vec!["input_embedding".into(), "output_embedding".into()]
            }
            ItemTables::Shared { .. } => vec!["item_embedding".into()],
        };
        for l in 0..self.layers.len() {
            names.extend([format!("gru.{l}.w"), format!("gru.{l}.u"), format!("gru.{l}.b")]);
        }
        names
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let n_tables = match self.tables {
            ItemTables::Separate { .. } => 2,
            _ => 1,
        };
        let mut kinds = vec![ParamKind::Rows; n_tables];
        for l in 0..self.layers.len() {
            let w = if l == 0 && self.config.embedding == EmbeddingMode::None {
                ParamKind::Rows
            } else {
                ParamKind::Dense
            };
            kinds.extend([w, ParamKind::Dense, ParamKind::Dense]);
        }
        kinds
    }

    pub fn params(&self) -> Vec<&Matrix<F>> {
        let mut out: Vec<&Matrix<F>> = match &self.tables {
            ItemTables::NoEmbedding { output } => vec![output],
            ItemTables::Separate { input, output } => vec![input, output],
            ItemTables::Shared { table } => vec![table],
        };
        for l in &self.layers {
            out.extend([&l.w, &l.u, &l.b]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<F>> {
        let mut out: Vec<&mut Matrix<F>> = match &mut self.tables {
            ItemTables::NoEmbedding { output } => vec![output],
            ItemTables::Separate { input, output } => vec![input, output],
            ItemTables::Shared { table } => vec![table],
        };
        for l in &mut self.layers {
            out.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        out
    }

    /// Rebuilds a model from tensors in [`Self::params`] order.
    pub fn from_params(config: ModelConfig, mut tensors: Vec<Matrix<F>>) -> Result<Self, ModelError> {
        let template = Self::zeros(config.clone())?;
        let shapes: Vec<_> = template.params().iter().map(|m| m.shape()).collect();
        let got: Vec<_> = tensors.iter().map(|m| m.shape()).collect();
        if shapes != got {
            return Err(ModelError::StateShape(format!(
                "expected tensor shapes {shapes:?}, got {got:?}"
            )));
        }
        let mut rest = tensors.split_off(match config.embedding {
            EmbeddingMode::Separate(_) => 2,
            _ => 1,
        });
        let mut tables_iter = tensors.into_iter();
        let tables = match config.embedding {
            EmbeddingMode::None => ItemTables::NoEmbedding {
                output: tables_iter.next().unwrap(),
            },
            EmbeddingMode::Separate(_) => ItemTables::Separate {
                input: tables_iter.next().unwrap(),
                output: tables_iter.next().unwrap(),
            },
            EmbeddingMode::Shared => ItemTables::Shared {
                table: tables_iter.next().unwrap(),
            },
        };
        let mut layers = Vec::new();
        while !rest.is_empty() {
            let mut it = rest.drain(..3);
            layers.push(GruLayer {
                w: it.next().unwrap(),
                u: it.next().unwrap(),
                b: it.next().unwrap(),
            });
        }
        Ok(Gru4Rec {
            config,
            tables,
            layers,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    pub fn cast<G: Real>(&self) -> Gru4Rec<G> {
        Gru4Rec::from_params(
            self.config.clone(),
            self.params().iter().map(|p| p.cast()).collect(),
        )
        .expect("same shapes")
    }

    fn check_items(&self, items: &[u32]) -> Result<(), ModelError> {
        let v = self.config.n_items;
        match items.iter().find(|&&i| i as usize >= v) {
            Some(&item) => Err(ModelError::ItemOutOfRange { item, n_items: v }),
            None => Ok(()),
        }
    }

    /// One recurrent step for a batch. `hidden[l]` holds the batch rows of
    /// layer `l` (already reset where sessions start). Dropout is applied
    /// only when `masks` is given.
    pub fn step(
        &self,
        hidden: &[Matrix<F>],
        inputs: &[u32],
        masks: Option<&DropoutMasks<F>>,
    ) -> Result<StepCache<F>, ModelError> {
        self.check_items(inputs)?;
        let n = inputs.len();
        if hidden.len() != self.layers.len() {
            return Err(ModelError::StateShape(format!(
                "{} state layers for {} GRU layers",
                hidden.len(),
                self.layers.len()
            )));
        }
        for (h, layer) in hidden.iter().zip(&self.layers) {
            if h.shape() != (n, layer.hidden_size()) {
                return Err(ModelError::StateShape(format!(
                    "state {:?}, expected {:?}",
                    h.shape(),
                    (n, layer.hidden_size())
                )));
            }
        }
        let idx: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let mut embed_mask = None;
        let mut x = match self.input_table() {
            None => LayerInput::Indices(idx.clone()),
            Some(table) => {
                let mut e = table.gather_rows(&idx);
                if let Some(m) = masks.and_then(|m| m.embed.as_ref()) {
                    mul_in_place(&mut e, m);
                    embed_mask = Some(m.clone());
                }
                LayerInput::Dense(e)
            }
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, (layer, h_prev)) in self.layers.iter().zip(hidden).enumerate() {
            let h = layer.hidden_size();
            let mut g = match &x {
                LayerInput::Indices(ix) => layer.w.gather_rows(ix),
                LayerInput::Dense(xm) => matmul(xm, &layer.w),
            };
            let bias = layer.b.row(0);
            for m in 0..n {
                let grow = g.row_mut(m);
                for (gv, bv) in grow.iter_mut().zip(bias) {
                    *gv += *bv;
                }
                let hrow = h_prev.row(m);
                for (p, &hp) in hrow.iter().enumerate() {
                    if hp != F::zero() {
                        axpy(hp, &layer.u.row(p)[..2 * h], &mut grow[..2 * h]);
                    }
                }
            }
            let mut r = Matrix::zeros(n, h);
            let mut z = Matrix::zeros(n, h);
            let mut rh = Matrix::zeros(n, h);
            for m in 0..n {
                let grow = g.row(m);
                for q in 0..h {
                    let rv = sigmoid(grow[q]);
                    r.set(m, q, rv);
                    z.set(m, q, sigmoid(grow[h + q]));
                    rh.set(m, q, rv * h_prev.get(m, q));
                }
            }
            let mut c = Matrix::zeros(n, h);
            let mut h_new = Matrix::zeros(n, h);
            for m in 0..n {
                let grow = &mut g.row_mut(m)[2 * h..];
                for (p, &v) in rh.row(m).iter().enumerate() {
                    if v != F::zero() {
                        axpy(v, &layer.u.row(p)[2 * h..], grow);
                    }
                }
                for q in 0..h {
                    let cv = grow[q].tanh();
                    let zv = z.get(m, q);
                    c.set(m, q, cv);
                    h_new.set(m, q, (F::one() - zv) * h_prev.get(m, q) + zv * cv);
                }
            }
            let mask = masks.and_then(|m| m.hidden.get(l).cloned().flatten());
            let mut out = h_new.clone();
            if let Some(mk) = &mask {
                mul_in_place(&mut out, mk);
            }
            let next = LayerInput::Dense(out.clone());
            caches.push(LayerCache {
                input: std::mem::replace(&mut x, next),
                h_prev: h_prev.clone(),
                r,
                z,
                c,
                rh,
                h_new,
                out,
                mask,
            });
        }
        Ok(StepCache {
            inputs: idx,
            embed_mask,
            layers: caches,
        })
    }

    /// Scores of `candidates` for every row of `output` (a top-layer output).
    pub fn score(&self, output: &Matrix<F>, candidates: &[u32]) -> Result<Matrix<F>, ModelError> {
        self.check_items(candidates)?;
        let idx: Vec<usize> = candidates.iter().map(|&i| i as usize).collect();
        Ok(matmul_nt_rows(output, self.output_table(), &idx))
    }

    /// Scores of the whole catalog.
    pub fn score_all(&self, output: &Matrix<F>) -> Matrix<F> {
        matmul_nt(output, self.output_table())
    }

    /// Gradients of all parameters touched by one step, given the loss
    /// gradient w.r.t. the candidate scores. Nothing flows into the previous
    /// hidden state.
    pub fn backward(
        &self,
        cache: &StepCache<F>,
        candidates: &[u32],
        dscores: &Matrix<F>,
    ) -> Vec<Grad<F>> {
        let n = cache.inputs.len();
        let kinds = self.param_kinds();
        let mut grads = GradBuffers::new(self, &kinds);
        let out_slot = match self.tables {
            ItemTables::Separate { .. } => 1,
            _ => 0,
        };
        let table = self.output_table();
        let top = &cache.layers.last().expect("at least one layer").out;
        let mut d_out = Matrix::zeros(n, self.config.top_size());
        for m in 0..n {
            let drow = dscores.row(m);
            let orow = d_out.row_mut(m);
            for (j, &c) in candidates.iter().enumerate() {
                if drow[j] != F::zero() {
                    axpy(drow[j], table.row(c as usize), orow);
                }
            }
        }
        {
            let acc = grads.rows_mut(out_slot);
            for (j, &c) in candidates.iter().enumerate() {
                let row = acc.row(c as usize);
                for m in 0..n {
                    let d = dscores.get(m, j);
                    if d != F::zero() {
                        axpy(d, top.row(m), row);
                    }
                }
            }
        }

        let first_layer_slot = if out_slot == 1 { 2 } else { 1 };
        for (l, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let h = layer.hidden_size();
            let mut dh = d_out;
            if let Some(mk) = &lc.mask {
                mul_in_place(&mut dh, mk);
            }
            let mut da = Matrix::zeros(n, 3 * h);
            for m in 0..n {
                let dar = da.row_mut(m);
                for q in 0..h {
                    let dhv = dh.get(m, q);
                    let zv = lc.z.get(m, q);
                    let cv = lc.c.get(m, q);
                    let hp = lc.h_prev.get(m, q);
                    dar[2 * h + q] = dhv * zv * (F::one() - cv * cv);
                    dar[h + q] = dhv * (cv - hp) * zv * (F::one() - zv);
                }
                for p in 0..h {
                    let drh = dot(&dar[2 * h..], &layer.u.row(p)[2 * h..]);
                    let rv = lc.r.get(m, p);
                    dar[p] = drh * lc.h_prev.get(m, p) * rv * (F::one() - rv);
                }
            }
            let slot = first_layer_slot + 3 * l;
            {
                let du = grads.dense_mut(slot + 1);
                for m in 0..n {
                    let dar = da.row(m);
                    for p in 0..h {
                        let hp = lc.h_prev.get(m, p);
                        let rhp = lc.rh.get(m, p);
                        let urow = du.row_mut(p);
                        if hp != F::zero() {
                            axpy(hp, &dar[..2 * h], &mut urow[..2 * h]);
                        }
                        if rhp != F::zero() {
                            axpy(rhp, &dar[2 * h..], &mut urow[2 * h..]);
                        }
                    }
                }
                if faults::active(Fault::FlipBackwardSign) {
                    du.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
                }
            }
            {
                let db = grads.dense_mut(slot + 2);
                for m in 0..n {
                    axpy(F::one(), da.row(m), db.row_mut(0));
                }
            }
            match &lc.input {
                LayerInput::Indices(ix) => {
                    let acc = grads.rows_mut(slot);
                    for (m, &i) in ix.iter().enumerate() {
                        axpy(F::one(), da.row(m), acc.row(i));
                    }
                    d_out = Matrix::zeros(0, 0);
                }
                LayerInput::Dense(x) => {
                    matmul_tn_acc(x, &da, grads.dense_mut(slot));
                    d_out = matmul_nt(&da, &layer.w);
                }
            }
        }

        if self.input_table().is_some() {
            let mut d_emb = d_out;
            if let Some(mk) = &cache.embed_mask {
                mul_in_place(&mut d_emb, mk);
            }
            // Shared mode accumulates both sides into the single table.
            let acc = grads.rows_mut(0);
            for (m, &i) in cache.inputs.iter().enumerate() {
                axpy(F::one(), d_emb.row(m), acc.row(i));
            }
        }
        grads.finish()
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn mul_in_place<F: Real>(a: &mut Matrix<F>, b: &Matrix<F>) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= *y;
    }
}

#[derive(Debug, Clone)]
enum LayerInput<F> {
    Indices(Vec<usize>),
    Dense(Matrix<F>),
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    input: LayerInput<F>,
    h_prev: Matrix<F>,
    r: Matrix<F>,
    z: Matrix<F>,
    c: Matrix<F>,
    rh: Matrix<F>,
    h_new: Matrix<F>,
    out: Matrix<F>,
    mask: Option<Matrix<F>>,
}

/// Intermediates retained by [`Gru4Rec::step`] for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    inputs: Vec<usize>,
    embed_mask: Option<Matrix<F>>,
    layers: Vec<LayerCache<F>>,
}

impl<F: Real> StepCache<F> {
    /// Top-layer output (after dropout), the vector that gets scored.
    pub fn output(&self) -> &Matrix<F> {
        &self.layers.last().unwrap().out
    }

    /// New hidden state of each layer (before dropout), to carry to the next step.
    pub fn new_hidden(&self) -> Vec<Matrix<F>> {
        self.layers.iter().map(|l| l.h_new.clone()).collect()
    }

    pub fn into_hidden(self) -> Vec<Matrix<F>> {
        self.layers.into_iter().map(|l| l.h_new).collect()
    }
}

/// Gradient of one parameter: dense, or a set of touched rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad<F> {
    Dense(Matrix<F>),
    Rows { index: Vec<usize>, rows: Matrix<F> },
}

impl<F: Real> Grad<F> {
    pub fn to_dense(&self, shape: (usize, usize)) -> Matrix<F> {
        match self {
            Grad::Dense(m) => m.clone(),
            Grad::Rows { index, rows } => {
                let mut out = Matrix::zeros(shape.0, shape.1);
                for (k, &i) in index.iter().enumerate() {
                    axpy(F::one(), rows.row(k), out.row_mut(i));
                }
                out
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Grad::Dense(m) => m.all_finite(),
            Grad::Rows { rows, .. } => rows.all_finite(),
        }
    }

    pub fn scale(&mut self, s: F) {
        let m = match self {
            Grad::Dense(m) => m,
            Grad::Rows { rows, .. } => rows,
        };
        m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
}

/// Accumulates sparse row gradients; each distinct row appears once.
struct RowAccumulator<F> {
    width: usize,
    index: Vec<usize>,
    pos: HashMap<usize, usize>,
    data: Vec<F>,
}

impl<F: Real> RowAccumulator<F> {
    fn row(&mut self, i: usize) -> &mut [F] {
        let k = *self.pos.entry(i).or_insert_with(|| {
            self.index.push(i);
            self.data.extend(std::iter::repeat_n(F::zero(), self.width));
            self.index.len() - 1
        });
        &mut self.data[k * self.width..(k + 1) * self.width]
    }
}

enum GradBuilder<F> {
    Dense(Matrix<F>),
    Rows(RowAccumulator<F>),
}

struct GradBuffers<F> {
    parts: Vec<GradBuilder<F>>,
}

impl<F: Real> GradBuffers<F> {
    fn new(model: &Gru4Rec<F>, kinds: &[ParamKind]) -> Self {
        let parts = model
            .params()
            .iter()
            .zip(kinds)
            .map(|(p, k)| match k {
                ParamKind::Dense => GradBuilder::Dense(Matrix::zeros(p.rows(), p.cols())),
                ParamKind::Rows => GradBuilder::Rows(RowAccumulator {
                    width: p.cols(),
                    index: Vec::new(),
                    pos: HashMap::new(),
                    data: Vec::new(),
                }),
            })
            .collect();
        GradBuffers { parts }
    }

    fn dense_mut(&mut self, slot: usize) -> &mut Matrix<F> {
        match &mut self.parts[slot] {
            GradBuilder::Dense(m) => m,
            GradBuilder::Rows(_) => unreachable!("parameter {slot} is row-sparse"),
        }
    }

    fn rows_mut(&mut self, slot: usize) -> &mut RowAccumulator<F> {
        match &mut self.parts[slot] {
            GradBuilder::Rows(r) => r,
            GradBuilder::Dense(_) => unreachable!("parameter {slot} is dense"),
        }
    }

    fn finish(self) -> Vec<Grad<F>> {
        self.parts
            .into_iter()
            .map(|p| match p {
                GradBuilder::Dense(m) => Grad::Dense(m),
                GradBuilder::Rows(r) => {
                    let n = r.index.len();
                    Grad::Rows {
                        index: r.index,
                        rows: Matrix::from_vec(n, r.width, r.data),
                    }
                }
            })
            .collect()
    }
}

/// Per-slot recurrent state for a full batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<F> {
    layers: Vec<Matrix<F>>,
}

impl<F: Real> HiddenState<F> {
    pub fn new(batch_size: usize, layer_sizes: &[usize]) -> Self {
        HiddenState {
            layers: layer_sizes
                .iter()
                .map(|&h| Matrix::zeros(batch_size, h))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Matrix<F>] {
        &self.layers
    }

    /// Zeroes the rows of slots that start a new session.
    pub fn reset(&mut self, slots: &[usize], reset: &[bool]) {
        if faults::active(Fault::SkipHiddenReset) {
            return;
        }
        for (&s, &r) in slots.iter().zip(reset) {
            if r {
                for l in &mut self.layers {
                    l.row_mut(s).fill(F::zero());
                }
            }
        }
    }

    pub fn gather(&self, slots: &[usize]) -> Vec<Matrix<F>> {
        self.layers.iter().map(|l| l.gather_rows(slots)).collect()
    }

    pub fn scatter(&mut self, slots: &[usize], rows: &[Matrix<F>]) {
        for (l, r) in self.layers.iter_mut().zip(rows) {
            l.scatter_rows(slots, r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: EmbeddingMode, layers: Vec<usize>, v: usize) -> ModelConfig {
        ModelConfig {
            n_items: v,
            layers,
            embedding: mode,
        }
    }

    #[test]
    fn separate_mode_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Gru4Rec<f32> =
            Gru4Rec::init(cfg(EmbeddingMode::Separate(3), vec![4], 10), &mut rng).unwrap();
        assert_eq!(m.input_table().unwrap().shape(), (10, 3));
        // stored input-major: W is in × 3H, U is H × 3H
        assert_eq!(m.layers()[0].w.shape(), (3, 12));
        assert_eq!(m.layers()[0].u.shape(), (4, 12));
        assert_eq!(m.layers()[0].b.shape(), (1, 12));
        assert_eq!(m.output_table().shape(), (10, 4));
        assert!(m.layers()[0].b.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shared_mode_is_one_storage() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m: Gru4Rec<f64> =
            Gru4Rec::init(cfg(EmbeddingMode::Shared, vec![5], 8), &mut rng).unwrap();
        assert!(std::ptr::eq(m.input_table().unwrap(), m.output_table()));
        m.output_table_mut().set(2, 1, 42.0);
        assert_eq!(m.input_table().unwrap().get(2, 1), 42.0);
        assert_eq!(m.params().len(), 4);
    }

    #[test]
    fn none_mode_first_layer_takes_catalog_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Gru4Rec<f64> =
            Gru4Rec::init(cfg(EmbeddingMode::None, vec![3, 2], 7), &mut rng).unwrap();
        assert_eq!(m.layers()[0].w.shape(), (7, 9));
        assert_eq!(m.layers()[1].w.shape(), (3, 6));
        assert_eq!(m.param_kinds()[1], ParamKind::Rows);
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Gru4Rec<f64> =
            Gru4Rec::init(cfg(EmbeddingMode::Separate(50), vec![100], 1000), &mut rng).unwrap();
        let emb_bound = (6.0f64 / 1050.0).sqrt();
        let emb = m.input_table().unwrap();
        assert!(emb.rows() * emb.cols() >= 50_000);
        assert!(emb.max_abs() <= emb_bound);
        // the sample should also come close to the bound
        assert!(emb.max_abs() > 0.99 * emb_bound);
        let gate_bound = (6.0f64 / 150.0).sqrt();
        assert!(m.layers()[0].w.max_abs() <= gate_bound);
        assert!(m.layers()[0].u.max_abs() <= (6.0f64 / 200.0).sqrt());
        let out_bound = (6.0f64 / 1100.0).sqrt();
        assert!(m.output_table().max_abs() <= out_bound);
    }

    #[test]
    fn zero_model_scores_zero() {
        let m: Gru4Rec<f64> = Gru4Rec::zeros(cfg(EmbeddingMode::Separate(3), vec![4], 6)).unwrap();
        let hidden = vec![Matrix::zeros(2, 4)];
        let cache = m.step(&hidden, &[1, 5], None).unwrap();
        let s = m.score(cache.output(), &[0, 1, 2, 3]).unwrap();
        assert!(s.as_slice().iter().all(|v| *v == 0.0));
        assert!(cache.new_hidden()[0].as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn out_of_range_items_rejected() {
        let m: Gru4Rec<f64> = Gru4Rec::zeros(cfg(EmbeddingMode::None, vec![2], 3)).unwrap();
        let hidden = vec![Matrix::zeros(1, 2)];
        assert!(matches!(
            m.step(&hidden, &[3], None),
            Err(ModelError::ItemOutOfRange { item: 3, .. })
        ));
        let c = m.step(&hidden, &[2], None).unwrap();
        assert!(m.score(c.output(), &[0, 9]).is_err());
    }

    #[test]
    fn embed_dropout_ignored_without_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Gru4Rec<f64> = Gru4Rec::init(cfg(EmbeddingMode::None, vec![3], 5), &mut rng).unwrap();
        let hidden = vec![Matrix::zeros(2, 3)];
        let masks = DropoutMasks {
            embed: Some(Matrix::zeros(2, 5)),
            hidden: vec![None],
        };
        let a = m.step(&hidden, &[0, 4], None).unwrap();
        let b = m.step(&hidden, &[0, 4], Some(&masks)).unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn rows_do_not_interact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: Gru4Rec<f32> =
            Gru4Rec::init(cfg(EmbeddingMode::Separate(4), vec![6, 5], 20), &mut rng).unwrap();
        let h: Vec<Matrix<f32>> = vec![
            Matrix::from_fn(3, 6, |r, c| (r as f32 - c as f32) * 0.1),
            Matrix::from_fn(3, 5, |r, c| (r * c) as f32 * 0.05),
        ];
        let full = m.step(&h, &[3, 7, 11], None).unwrap();
        for k in 0..3 {
            let hk: Vec<Matrix<f32>> = h.iter().map(|x| x.gather_rows(&[k])).collect();
            let one = m.step(&hk, &[[3, 7, 11][k]], None).unwrap();
            assert_eq!(one.output().row(0), full.output().row(k));
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [EmbeddingMode::None, EmbeddingMode::Separate(3), EmbeddingMode::Shared] {
            let m: Gru4Rec<f64> = Gru4Rec::init(cfg(mode, vec![4, 4], 9), &mut rng).unwrap();
            let h = vec![Matrix::zeros(2, 4), Matrix::zeros(2, 4)];
            let cache = m.step(&h, &[1, 2], None).unwrap();
            let grads = m.backward(&cache, &[1, 2, 8], &Matrix::zeros(2, 3));
            for (g, p) in grads.iter().zip(m.params()) {
                assert_eq!(g.to_dense(p.shape()).max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn hidden_state_reset_gather_scatter() {
        let mut hs = HiddenState::<f64>::new(3, &[2]);
        hs.scatter(&[0, 1, 2], &[Matrix::from_vec(3, 2, vec![1.0; 6])]);
        hs.reset(&[0, 2], &[true, false]);
        assert_eq!(hs.layers()[0].row(0), &[0.0, 0.0]);
        assert_eq!(hs.layers()[0].row(2), &[1.0, 1.0]);
        assert_eq!(hs.gather(&[1])[0].row(0), &[1.0, 1.0]);
    }

    #[test]
    fn from_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Gru4Rec<f32> =
            Gru4Rec::init(cfg(EmbeddingMode::Separate(3), vec![4, 2], 6), &mut rng).unwrap();
        let back = Gru4Rec::from_params(
            m.config().clone(),
            m.params().into_iter().cloned().collect(),
        )
        .unwrap();
        assert_eq!(back, m);
    }
}
