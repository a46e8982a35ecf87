//! Training and inference over shared fixed-point data: mini-batch
//! gradient descent for linear and logistic regression, feed-forward
//! neural-network inference, and the dataset plumbing around them.
//!
//! One step of descent is `w <- w - lr/B . X^T (X w - y)` with `lr/B`
//! restricted to a power of two `2^-k`, so the public factor folds
//! into the backward truncation: forward products truncate by the
//! fraction width `d`, backward ones by `d + k`. Every secure routine
//! here has a plaintext mirror that applies the same fixed-point rule
//! on clear values; the mirrors are the oracles the tests (and any
//! caller wanting a reference trajectory) compare against. Truncation
//! is stochastic, so the secure trajectory tracks the mirror within
//! one unit in the last place per truncated product rather than
//! exactly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::layer1::{DotGroup, ZkSetup};
use crate::layer2::{pi_dotp_tr, pi_dotp_tr_batch, pi_relu_batch, pi_sig, pi_sig_batch, Kit};
use crate::protocols::{pi_frec_batch, pi_sh_batch, wire_lincomb, Session, Wire};
use crate::ring::{arith_shift_trunc, FixedPoint, RingElem};
use crate::{Error, Result, Role};

/// Column layout of a dataset file: which column, if any, carries the
/// label. Every other column is a feature, in file order.
#[derive(Clone, Copy, Debug, Default)]
pub struct CsvSchema {
    pub label_col: Option<usize>,
}

/// A parsed dataset. `labels` is empty when the schema names no label
/// column.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.len()
    }

    pub fn nf(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Reads a rectangular numeric CSV with a header row. Errors name the
/// offending row and column, counting the header as row 1.
pub fn csv_load(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let at = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| at(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| at(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len();
    if let Some(lc) = schema.label_col {
        if lc >= width {
            return Err(at(format!("label column {lc} outside {width} columns")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| at(format!("row {row}: {e}")))?;
        if rec.len() != width {
            return Err(at(format!(
                "row {row}: {} columns, expected {width}",
                rec.len()
            )));
        }
        let mut feat = Vec::with_capacity(width - usize::from(schema.label_col.is_some()));
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                at(format!("row {row}, col {}: not a number: {field:?}", col + 1))
            })?;
            if Some(col) == schema.label_col {
                labels.push(v);
            } else {
                feat.push(v);
            }
        }
        features.push(feat);
    }
    Ok(Dataset {
        header,
        features,
        labels,
    })
}

/// Writes a numeric matrix as CSV under a generated `c0,c1,..` header.
/// `f64` formatting round-trips, so a reload reproduces the values
/// exactly.
pub fn save_matrix_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(Error::Config("refusing to write an empty matrix".into()));
    }
    let mut out = String::new();
    for j in 0..width {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("c{j}"));
    }
    out.push('\n');
    for r in rows {
        assert_eq!(r.len(), width);
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn batches_per_epoch(rows: usize, batch: usize) -> usize {
    (rows + batch - 1) / batch
}

/// Batch `i` of an epoch: a seeded shuffle of the row indices cut into
/// consecutive runs of `batch`, the final one short when `batch` does
/// not divide `rows`. Pure function of its arguments, so every server
/// (and the plaintext mirror) derives the identical schedule.
pub fn batch_select(rows: usize, batch: usize, epoch_seed: u64, i: usize) -> Vec<usize> {
    assert!(rows > 0 && batch > 0);
    let nb = batches_per_epoch(rows, batch);
    assert!(i < nb, "batch {i} of {nb}");
    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    order[i * batch..(i * batch + batch).min(rows)].to_vec()
}

/// Public training parameters, identical on all three servers. The
/// learning rate is the exact rational `lr_num / lr_den`; dividing by
/// the batch size must leave a power of two so the factor can fold
/// into a shift.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub ell: u8,
    /// Fraction bits of the fixed-point encoding.
    pub d: u8,
    pub nf: usize,
    pub batch: usize,
    pub iterations: usize,
    pub lr_num: u64,
    pub lr_den: u64,
}

impl TrainConfig {
    /// The `k` with `lr / batch = 2^-k`.
    pub fn shift_k(&self) -> Result<u8> {
        if self.lr_num == 0 || self.lr_den == 0 || self.batch == 0 {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        let denom = self
            .lr_den
            .checked_mul(self.batch as u64)
            .ok_or_else(|| Error::Config("lr_den * batch overflows".into()))?;
        if denom % self.lr_num != 0 || !(denom / self.lr_num).is_power_of_two() {
            return Err(Error::Config(format!(
                "lr/B = {}/{denom} is not a power of two",
                self.lr_num
            )));
        }
        let k = (denom / self.lr_num).trailing_zeros() as u8;
        if self.d as u32 + k as u32 >= self.ell as u32 {
            return Err(Error::Config(format!(
                "backward shift d+k = {} does not fit below ell = {}",
                self.d as u32 + k as u32,
                self.ell
            )));
        }
        Ok(k)
    }
}

/// Encodes a plaintext matrix row-major into raw ring values.
pub fn encode_matrix(rows: &[Vec<f64>], frac_bits: u8, ell: u8) -> Result<Vec<RingElem>> {
    let mut flat = Vec::new();
    for r in rows {
        for &q in r {
            flat.push(FixedPoint::encode(q, frac_bits, ell)?.raw);
        }
    }
    Ok(flat)
}

/// A secret-shared fixed-point matrix, row-major.
#[derive(Clone)]
pub struct SharedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub frac_bits: u8,
    data: Vec<Wire>,
}

impl SharedMatrix {
    /// Wraps already-shared wires; `data` is row-major.
    pub fn from_wires(data: Vec<Wire>, rows: usize, cols: usize, frac_bits: u8) -> SharedMatrix {
        assert_eq!(data.len(), rows * cols);
        SharedMatrix {
            rows,
            cols,
            frac_bits,
            data,
        }
    }

    /// Dealer shares a raw matrix (flattened row-major); the other two
    /// servers pass `None`.
    pub fn share_raw(
        sess: &mut Session,
        dealer: Role,
        flat: Option<&[RingElem]>,
        rows: usize,
        cols: usize,
        frac_bits: u8,
        ell: u8,
    ) -> Result<SharedMatrix> {
        let data = pi_sh_batch(sess, dealer, flat, ell, rows * cols)?;
        Ok(Self::from_wires(data, rows, cols, frac_bits))
    }

    /// Dealer shares a plaintext matrix, encoding each entry.
    pub fn share(
        sess: &mut Session,
        dealer: Role,
        plain: Option<&[Vec<f64>]>,
        rows: usize,
        cols: usize,
        frac_bits: u8,
        ell: u8,
    ) -> Result<SharedMatrix> {
        let flat = plain.map(|m| encode_matrix(m, frac_bits, ell)).transpose()?;
        Self::share_raw(sess, dealer, flat.as_deref(), rows, cols, frac_bits, ell)
    }

    pub fn row(&self, i: usize) -> &[Wire] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn wires(&self) -> &[Wire] {
        &self.data
    }

    /// Clones into the transposed layout. Dot-product groups take each
    /// operand as one contiguous slice, so columns must be gathered.
    pub fn transpose(&self) -> SharedMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.row(i)[j].clone());
            }
        }
        SharedMatrix::from_wires(data, self.cols, self.rows, self.frac_bits)
    }

    /// Clones the named rows into a batch matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> SharedMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend(self.row(i).iter().cloned());
        }
        SharedMatrix::from_wires(data, idx.len(), self.cols, self.frac_bits)
    }
}

/// A secret-shared fixed-point vector.
#[derive(Clone)]
pub struct SharedVector {
    pub frac_bits: u8,
    data: Vec<Wire>,
}

impl SharedVector {
    pub fn from_wires(data: Vec<Wire>, frac_bits: u8) -> SharedVector {
        SharedVector { frac_bits, data }
    }

    pub fn share_raw(
        sess: &mut Session,
        dealer: Role,
        vals: Option<&[RingElem]>,
        len: usize,
        frac_bits: u8,
        ell: u8,
    ) -> Result<SharedVector> {
        let data = pi_sh_batch(sess, dealer, vals, ell, len)?;
        Ok(SharedVector { frac_bits, data })
    }

    pub fn share(
        sess: &mut Session,
        dealer: Role,
        plain: Option<&[f64]>,
        len: usize,
        frac_bits: u8,
        ell: u8,
    ) -> Result<SharedVector> {
        let vals = match plain {
            Some(qs) => Some(
                qs.iter()
                    .map(|&q| Ok(FixedPoint::encode(q, frac_bits, ell)?.raw))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Self::share_raw(sess, dealer, vals.as_deref(), len, frac_bits, ell)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn wires(&self) -> &[Wire] {
        &self.data
    }

    pub fn gather(&self, idx: &[usize]) -> Vec<Wire> {
        idx.iter().map(|&i| self.data[i].clone()).collect()
    }
}

/// Zero initial weights: a public constant, so no interaction.
pub fn zero_weights(role: Role, nf: usize, ell: u8) -> Vec<Wire> {
    (0..nf)
        .map(|_| Wire::constant(role, RingElem::zero(ell)))
        .collect()
}

fn affine_sub(a: &Wire, b: &Wire) -> Result<Wire> {
    let one = RingElem::one(a.width());
    wire_lincomb(RingElem::zero(a.width()), &[(one, a), (-one, b)])
}

/// Truncated forward pass `X w`: one dot product per batch row.
fn forward(sess: &mut Session, zk: &ZkSetup, x: &SharedMatrix, w: &[Wire]) -> Result<Vec<Wire>> {
    assert_eq!(x.cols, w.len());
    let groups: Vec<DotGroup> = (0..x.rows).map(|i| DotGroup { xs: x.row(i), ys: w }).collect();
    pi_dotp_tr_batch(sess, zk, &groups, x.frac_bits)
}

/// Gradient step shared by both regressions: predictions to updated
/// weights. One dot product per feature against the transposed batch,
/// truncated by `d + k` to absorb the `lr/B = 2^-k` factor.
fn descend(
    sess: &mut Session,
    zk: &ZkSetup,
    x: &SharedMatrix,
    y: &[Wire],
    w: &[Wire],
    yhat: &[Wire],
    k: u8,
) -> Result<Vec<Wire>> {
    assert_eq!(x.rows, y.len());
    let err: Vec<Wire> = yhat
        .iter()
        .zip(y)
        .map(|(p, t)| affine_sub(p, t))
        .collect::<Result<_>>()?;
    let xt = x.transpose();
    let groups: Vec<DotGroup> = (0..xt.rows)
        .map(|j| DotGroup {
            xs: xt.row(j),
            ys: &err,
        })
        .collect();
    let grad = pi_dotp_tr_batch(sess, zk, &groups, x.frac_bits + k)?;
    w.iter()
        .zip(&grad)
        .map(|(wj, g)| affine_sub(wj, g))
        .collect()
}

/// One linear-regression step on a batch: `B` forward dot products,
/// `nf` backward ones.
pub fn linreg_train_iter(
    sess: &mut Session,
    zk: &ZkSetup,
    x: &SharedMatrix,
    y: &[Wire],
    w: &[Wire],
    k: u8,
) -> Result<Vec<Wire>> {
    let yhat = forward(sess, zk, x, w)?;
    descend(sess, zk, x, y, w, &yhat, k)
}

/// One logistic-regression step: the linear step with the piecewise
/// sigmoid applied to each forward output.
pub fn logreg_train_iter(
    sess: &mut Session,
    kit: &Kit,
    x: &SharedMatrix,
    y: &[Wire],
    w: &[Wire],
    k: u8,
) -> Result<Vec<Wire>> {
    let z = forward(sess, &kit.arith, x, w)?;
    let yhat = pi_sig_batch(sess, kit, &z, x.frac_bits)?;
    descend(sess, &kit.arith, x, y, w, &yhat, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    LinReg,
    LogReg,
}

/// Full training loop from zero weights: `cfg.iterations` steps over
/// batches drawn by `batch_select`, epoch `e` seeded with
/// `batch_seed + e`.
pub fn train(
    sess: &mut Session,
    kit: &Kit,
    alg: Algorithm,
    cfg: &TrainConfig,
    x: &SharedMatrix,
    y: &[Wire],
    batch_seed: u64,
) -> Result<Vec<Wire>> {
    let k = cfg.shift_k()?;
    if x.cols != cfg.nf || x.rows != y.len() {
        return Err(Error::Config(format!(
            "dataset is {}x{} with {} labels, config wants nf = {}",
            x.rows,
            x.cols,
            y.len(),
            cfg.nf
        )));
    }
    let mut w = zero_weights(sess.role, cfg.nf, cfg.ell);
    let nb = batches_per_epoch(x.rows, cfg.batch);
    for it in 0..cfg.iterations {
        let idx = batch_select(
            x.rows,
            cfg.batch,
            batch_seed.wrapping_add((it / nb) as u64),
            it % nb,
        );
        let xb = x.gather_rows(&idx);
        let yb: Vec<Wire> = idx.iter().map(|&i| y[i].clone()).collect();
        w = match alg {
            Algorithm::LinReg => linreg_train_iter(sess, &kit.arith, &xb, &yb, &w, k)?,
            Algorithm::LogReg => logreg_train_iter(sess, kit, &xb, &yb, &w, k)?,
        };
    }
    Ok(w)
}

/// `x . w`, truncated: the linear-regression forward pass on one
/// instance.
pub fn linreg_infer(
    sess: &mut Session,
    zk: &ZkSetup,
    x: &[Wire],
    w: &[Wire],
    d: u8,
) -> Result<Wire> {
    pi_dotp_tr(sess, zk, x, w, d)
}

/// Piecewise sigmoid of the truncated product: logistic forward pass.
pub fn logreg_infer(sess: &mut Session, kit: &Kit, x: &[Wire], w: &[Wire], d: u8) -> Result<Wire> {
    let z = pi_dotp_tr(sess, &kit.arith, x, w, d)?;
    pi_sig(sess, kit, &z, d)
}

/// Feed-forward inference on a batch of inputs. Layer matrices are
/// stored transposed (one row per output unit) so each unit's weight
/// vector is contiguous; relu follows every layer but the last.
/// Callers chunk large sample batches to bound preprocessing memory.
pub fn nn_infer_batch(
    sess: &mut Session,
    kit: &Kit,
    xs: &[Vec<Wire>],
    layers: &[SharedMatrix],
) -> Result<Vec<Vec<Wire>>> {
    if xs.is_empty() || layers.is_empty() {
        return Ok(xs.to_vec());
    }
    let mut acts: Vec<Vec<Wire>> = xs.to_vec();
    for (li, layer) in layers.iter().enumerate() {
        let mut groups = Vec::with_capacity(acts.len() * layer.rows);
        for a in &acts {
            assert_eq!(a.len(), layer.cols, "activation width at layer {li}");
            for u in 0..layer.rows {
                groups.push(DotGroup {
                    xs: layer.row(u),
                    ys: a,
                });
            }
        }
        let mut z = pi_dotp_tr_batch(sess, &kit.arith, &groups, layer.frac_bits)?;
        if li + 1 < layers.len() {
            z = pi_relu_batch(sess, kit, &z)?;
        }
        acts = z.chunks(layer.rows).map(<[Wire]>::to_vec).collect();
    }
    Ok(acts)
}

pub fn nn_infer(
    sess: &mut Session,
    kit: &Kit,
    x: &[Wire],
    layers: &[SharedMatrix],
) -> Result<Vec<Wire>> {
    let one = [x.to_vec()];
    Ok(nn_infer_batch(sess, kit, &one, layers)?.pop().unwrap())
}

/// Loads an `in x out` weight matrix CSV and returns it transposed and
/// flattened (unit-major) together with `(out, in)`, ready for sharing
/// and `SharedMatrix::from_wires`.
pub fn load_layer_csv(path: &Path, frac_bits: u8, ell: u8) -> Result<(Vec<RingElem>, usize, usize)> {
    let ds = csv_load(path, CsvSchema::default())?;
    let (in_dim, out_dim) = (ds.rows(), ds.nf());
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Config(format!(
            "{}: empty weight matrix",
            path.display()
        )));
    }
    let mut flat = Vec::with_capacity(in_dim * out_dim);
    for u in 0..out_dim {
        for r in &ds.features {
            flat.push(FixedPoint::encode(r[u], frac_bits, ell)?.raw);
        }
    }
    Ok((flat, out_dim, in_dim))
}

/// Fairly reconstructs a weight vector and decodes it to plaintext.
pub fn open_weights(sess: &mut Session, w: &[Wire], frac_bits: u8) -> Result<Vec<f64>> {
    Ok(pi_frec_batch(sess, w)?
        .into_iter()
        .map(|r| FixedPoint::from_raw(r, frac_bits).decode())
        .collect())
}

// ---- plaintext mirrors ----

/// Deterministic mirror of the truncating dot product.
pub fn plain_dotp_tr(xs: &[RingElem], ys: &[RingElem], d: u8) -> RingElem {
    assert_eq!(xs.len(), ys.len());
    let mut acc = RingElem::zero(xs[0].width());
    for (x, y) in xs.iter().zip(ys) {
        acc += *x * *y;
    }
    arith_shift_trunc(acc, d)
}

/// Exact mirror of the secure piecewise sigmoid, sign bits and all:
/// 0 below -1/2, `v + 1/2` in between, 1 above.
pub fn plain_sig(v: RingElem, d: u8) -> RingElem {
    let ell = v.width();
    assert!(d >= 1 && d < ell - 1);
    let half = RingElem::new(1u64 << (d - 1), ell);
    let vp = v + half;
    let vm = v - half;
    if vm.msb() == 0 {
        RingElem::new(1u64 << d, ell)
    } else if vp.msb() == 1 {
        RingElem::zero(ell)
    } else {
        vp
    }
}

fn plain_descend(
    x: &[Vec<RingElem>],
    y: &[RingElem],
    w: &[RingElem],
    yhat: &[RingElem],
    d: u8,
    k: u8,
) -> Vec<RingElem> {
    let err: Vec<RingElem> = yhat.iter().zip(y).map(|(p, t)| *p - *t).collect();
    (0..w.len())
        .map(|j| {
            let col: Vec<RingElem> = x.iter().map(|row| row[j]).collect();
            w[j] - plain_dotp_tr(&col, &err, d + k)
        })
        .collect()
}

pub fn plain_linreg_iter(
    x: &[Vec<RingElem>],
    y: &[RingElem],
    w: &[RingElem],
    d: u8,
    k: u8,
) -> Vec<RingElem> {
    let yhat: Vec<RingElem> = x.iter().map(|row| plain_dotp_tr(row, w, d)).collect();
    plain_descend(x, y, w, &yhat, d, k)
}

pub fn plain_logreg_iter(
    x: &[Vec<RingElem>],
    y: &[RingElem],
    w: &[RingElem],
    d: u8,
    k: u8,
) -> Vec<RingElem> {
    let yhat: Vec<RingElem> = x
        .iter()
        .map(|row| plain_sig(plain_dotp_tr(row, w, d), d))
        .collect();
    plain_descend(x, y, w, &yhat, d, k)
}

/// Plaintext mirror of `train`: same zero start, same batch schedule.
pub fn plain_train(
    alg: Algorithm,
    cfg: &TrainConfig,
    x: &[Vec<RingElem>],
    y: &[RingElem],
    batch_seed: u64,
) -> Result<Vec<RingElem>> {
    let k = cfg.shift_k()?;
    let mut w = vec![RingElem::zero(cfg.ell); cfg.nf];
    let nb = batches_per_epoch(x.len(), cfg.batch);
    for it in 0..cfg.iterations {
        let idx = batch_select(
            x.len(),
            cfg.batch,
            batch_seed.wrapping_add((it / nb) as u64),
            it % nb,
        );
        let xb: Vec<Vec<RingElem>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yb: Vec<RingElem> = idx.iter().map(|&i| y[i]).collect();
        w = match alg {
            Algorithm::LinReg => plain_linreg_iter(&xb, &yb, &w, cfg.d, k),
            Algorithm::LogReg => plain_logreg_iter(&xb, &yb, &w, cfg.d, k),
        };
    }
    Ok(w)
}

/// Double-precision reference for the network, same transposed layer
/// layout as `nn_infer`.
pub fn plain_nn_infer(x: &[f64], layers: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let mut act = x.to_vec();
    for (li, layer) in layers.iter().enumerate() {
        let mut z: Vec<f64> = layer
            .iter()
            .map(|row| row.iter().zip(&act).map(|(a, b)| a * b).sum())
            .collect();
        if li + 1 < layers.len() {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        act = z;
    }
    act
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
