//! The BLSTM mask network and its manual backward pass.
//!
//! Parameters live in one flat vector addressed through a layout table,
//! which keeps the optimizer and checkpoints trivial. The float type is
//! generic: training runs in f32, gradient checking in f64.

use super::{MaskNetConfig, ModelError};
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn fl<F: NdFloat>(x: f64) -> F {
    F::from(x).expect("constant representable in the float type")
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[derive(Clone, Copy)]
struct MatSeg {
    off: usize,
    rows: usize,
    cols: usize,
}

impl MatSeg {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn view<'a, F>(&self, p: &'a [F]) -> ArrayView2<'a, F> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.off..self.off + self.len()])
            .expect("layout segment consistent")
    }
}

#[derive(Clone, Copy)]
struct VecSeg {
    off: usize,
    len: usize,
}

impl VecSeg {
    fn view<'a, F>(&self, p: &'a [F]) -> ArrayView1<'a, F> {
        ArrayView1::from_shape(self.len, &p[self.off..self.off + self.len])
            .expect("layout segment consistent")
    }
}

/// Per-direction LSTM weights: input map (4H × in), recurrent map
/// (4H × H), bias (4H). Gate order within the 4H axis is [i | f | g | o].
struct DirLayout {
    wx: MatSeg,
    wh: MatSeg,
    b: VecSeg,
}

struct Layout {
    lstm: Vec<Vec<DirLayout>>,
    out_w: MatSeg,
    out_b: VecSeg,
    total: usize,
}

fn layout(config: &MaskNetConfig) -> Layout {
    let h = config.hidden_units_per_direction;
    let dirs = config.directions();
    let mut off = 0;
    let mut lstm = Vec::with_capacity(config.recurrent_layers);
    for l in 0..config.recurrent_layers {
        let input = if l == 0 { config.input_bins } else { dirs * h };
        let mut per_dir = Vec::with_capacity(dirs);
        for _ in 0..dirs {
            let wx = MatSeg { off, rows: 4 * h, cols: input };
            off += wx.len();
            let wh = MatSeg { off, rows: 4 * h, cols: h };
            off += wh.len();
            let b = VecSeg { off, len: 4 * h };
            off += b.len;
            per_dir.push(DirLayout { wx, wh, b });
        }
        lstm.push(per_dir);
    }
    let out_w = MatSeg { off, rows: config.input_bins, cols: dirs * h };
    let off2 = off + out_w.len();
    let out_b = VecSeg { off: off2, len: config.input_bins };
    Layout { lstm, out_w, out_b, total: off2 + out_b.len }
}

/// Rows of an n×n matrix orthonormalized by modified Gram-Schmidt.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    for i in 0..n {
        loop {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for k in 0..n {
                    m[i * n + k] /= norm;
                }
                break;
            }
            for k in 0..n {
                m[i * n + k] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    m
}

/// Mask-inference network. Eval-mode forward is a pure function of
/// (parameters, input); dropout only runs while the training flag is set.
#[derive(Debug, Clone)]
pub struct MaskNet<F: NdFloat> {
    config: MaskNetConfig,
    params: Vec<F>,
    training: bool,
    pub(crate) step: u64,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<F: NdFloat> {
    layer_inputs: Vec<Array3<F>>,
    dirs: Vec<Vec<DirTape<F>>>,
    dropout: Option<Array3<F>>,
    final_input: Array3<F>,
    /// Network output, (frames, batch, bins), entries strictly in (0, 1).
    pub mask: Array3<F>,
}

struct DirTape<F> {
    gates: Array3<F>,
    cells: Array3<F>,
    tanh_c: Array3<F>,
    h: Array3<F>,
}

impl<F: NdFloat> MaskNet<F> {
    /// Fresh network with seeded initialization: uniform fan-in scaling
    /// for affine maps, orthogonal recurrent kernels, forget-gate bias 1.
    pub fn new(config: MaskNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let lt = layout(&config);
        let h = config.hidden_units_per_direction;
        let mut params = vec![F::zero(); lt.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for per_dir in &lt.lstm {
            for dl in per_dir {
                let bound = 1.0 / (dl.wx.cols as f64).sqrt();
                for v in &mut params[dl.wx.off..dl.wx.off + dl.wx.len()] {
                    *v = fl(rng.random_range(-bound..=bound));
                }
                for gate in 0..4 {
                    let q = orthogonal(h, &mut rng);
                    let base = dl.wh.off + gate * h * h;
                    for (k, val) in q.into_iter().enumerate() {
                        params[base + k] = fl(val);
                    }
                }
                for v in &mut params[dl.b.off + h..dl.b.off + 2 * h] {
                    *v = F::one();
                }
            }
        }
        let bound = 1.0 / (lt.out_w.cols as f64).sqrt();
        for v in &mut params[lt.out_w.off..lt.out_w.off + lt.out_w.len()] {
            *v = fl(rng.random_range(-bound..=bound));
        }
        Ok(Self { config, params, training: false, step: 0 })
    }

    pub(crate) fn from_parts(
        config: MaskNetConfig,
        params: Vec<F>,
        step: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let lt = layout(&config);
        if params.len() != lt.total {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "parameter count {} does not match the {} the config implies",
                params.len(),
                lt.total
            )));
        }
        Ok(Self { config, params, training: false, step })
    }

    pub fn config(&self) -> &MaskNetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[F] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, flag: bool) {
        self.training = flag;
    }

    /// Completed training steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Single-sequence eval-mode forward: (frames × bins) in, mask out.
    pub fn forward(&self, features: &Array2<F>) -> Result<Array2<F>, ModelError> {
        if self.training {
            return Err(ModelError::InvalidArgument(
                "forward requires eval mode; clear the training flag first".into(),
            ));
        }
        let (t_len, bins) = features.dim();
        let x = features
            .to_owned()
            .into_shape_with_order((t_len, 1, bins))
            .expect("reshape (T, bins) to (T, 1, bins)");
        let tape = self.forward_batch(&x, None)?;
        Ok(tape
            .mask
            .into_shape_with_order((t_len, bins))
            .expect("reshape (T, 1, bins) to (T, bins)"))
    }

    /// Batched forward over (frames, batch, bins). An rng is required
    /// exactly when dropout is active (training flag set, probability > 0).
    pub fn forward_batch(
        &self,
        x: &Array3<F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tape<F>, ModelError> {
        let (t_len, batch, bins) = x.dim();
        if bins != self.config.input_bins {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} feature bins", self.config.input_bins),
                got: format!("{bins}"),
            });
        }
        if t_len == 0 || batch == 0 {
            return Err(ModelError::InvalidArgument("empty input batch".into()));
        }
        let p = self.config.dropout_probability;
        let dropout_active = self.training && p > 0.0;
        if dropout_active && rng.is_none() {
            return Err(ModelError::InvalidArgument(
                "training-mode forward with dropout needs an rng".into(),
            ));
        }

        let lt = layout(&self.config);
        let h = self.config.hidden_units_per_direction;
        let dirs_n = self.config.directions();
        let mut layer_inputs = Vec::with_capacity(self.config.recurrent_layers);
        let mut dir_tapes = Vec::with_capacity(self.config.recurrent_layers);
        let mut input = x.clone();
        for per_dir in &lt.lstm {
            let mut concat = Array3::<F>::zeros((t_len, batch, dirs_n * h));
            let mut tapes = Vec::with_capacity(dirs_n);
            for (d, dl) in per_dir.iter().enumerate() {
                let tape = run_direction(
                    &input,
                    dl.wx.view(&self.params),
                    dl.wh.view(&self.params),
                    dl.b.view(&self.params),
                    d == 1,
                );
                concat.slice_mut(s![.., .., d * h..(d + 1) * h]).assign(&tape.h);
                tapes.push(tape);
            }
            layer_inputs.push(input);
            dir_tapes.push(tapes);
            input = concat;
        }

        let dropout = if dropout_active {
            let rng = rng.expect("checked above");
            let keep = fl::<F>(1.0 / (1.0 - p));
            let mut mask = Array3::<F>::zeros(input.dim());
            for v in mask.iter_mut() {
                *v = if rng.random::<f64>() < p { F::zero() } else { keep };
            }
            input.zip_mut_with(&mask, |a, &m| *a = *a * m);
            Some(mask)
        } else {
            None
        };
        let final_input = input;

        let f2 = final_input
            .view()
            .into_shape_with_order((t_len * batch, dirs_n * h))
            .expect("standard layout reshape");
        let mut a = f2.dot(&lt.out_w.view(&self.params).t());
        a += &lt.out_b.view(&self.params);
        a.mapv_inplace(sigmoid);
        let mask = a
            .into_shape_with_order((t_len, batch, self.config.input_bins))
            .expect("reshape mask");

        Ok(Tape { layer_inputs, dirs: dir_tapes, dropout, final_input, mask })
    }

    /// Gradient of a scalar loss w.r.t. all parameters, given dL/dmask.
    pub fn backward(&self, tape: &Tape<F>, d_mask: &Array3<F>) -> Result<Vec<F>, ModelError> {
        if d_mask.dim() != tape.mask.dim() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{:?}", tape.mask.dim()),
                got: format!("{:?}", d_mask.dim()),
            });
        }
        let lt = layout(&self.config);
        let h = self.config.hidden_units_per_direction;
        let dirs_n = self.config.directions();
        let (t_len, batch, bins) = tape.mask.dim();
        let mut grads = vec![F::zero(); lt.total];

        // output affine + sigmoid
        let mut da2 = Array2::<F>::zeros((t_len * batch, bins));
        {
            let da = da2.as_slice_mut().expect("standard layout");
            let m = tape.mask.as_slice().expect("standard layout");
            let dm = d_mask.as_slice().expect("standard layout");
            for i in 0..da.len() {
                da[i] = dm[i] * m[i] * (F::one() - m[i]);
            }
        }
        let f2 = tape
            .final_input
            .view()
            .into_shape_with_order((t_len * batch, dirs_n * h))
            .expect("standard layout reshape");
        let dout_w = da2.t().dot(&f2);
        let dout_b = da2.sum_axis(ndarray::Axis(0));
        grads[lt.out_w.off..lt.out_w.off + lt.out_w.len()]
            .copy_from_slice(dout_w.as_slice().expect("owned gemm result"));
        grads[lt.out_b.off..lt.out_b.off + lt.out_b.len]
            .copy_from_slice(dout_b.as_slice().expect("owned sum result"));
        let dfinal2 = da2.dot(&lt.out_w.view(&self.params));
        let mut dcur = dfinal2
            .into_shape_with_order((t_len, batch, dirs_n * h))
            .expect("reshape upstream gradient");
        if let Some(dmask) = &tape.dropout {
            dcur.zip_mut_with(dmask, |a, &m| *a = *a * m);
        }

        for l in (0..self.config.recurrent_layers).rev() {
            let mut dx_sum = Array3::<F>::zeros(tape.layer_inputs[l].dim());
            for (d, dl) in lt.lstm[l].iter().enumerate() {
                let dh_dir = dcur.slice(s![.., .., d * h..(d + 1) * h]);
                let (dwx, dwh, db, dx) = backward_direction(
                    &tape.layer_inputs[l],
                    &tape.dirs[l][d],
                    dl.wx.view(&self.params),
                    dl.wh.view(&self.params),
                    dh_dir,
                    d == 1,
                );
                grads[dl.wx.off..dl.wx.off + dl.wx.len()]
                    .copy_from_slice(dwx.as_slice().expect("owned gemm result"));
                grads[dl.wh.off..dl.wh.off + dl.wh.len()]
                    .copy_from_slice(dwh.as_slice().expect("owned gemm result"));
                grads[dl.b.off..dl.b.off + dl.b.len]
                    .copy_from_slice(db.as_slice().expect("owned sum result"));
                dx_sum += &dx;
            }
            dcur = dx_sum;
        }
        Ok(grads)
    }
}

fn run_direction<F: NdFloat>(
    x: &Array3<F>,
    wx: ArrayView2<F>,
    wh: ArrayView2<F>,
    b: ArrayView1<F>,
    reverse: bool,
) -> DirTape<F> {
    let (t_len, batch, input) = x.dim();
    let h_dim = wh.shape()[1];
    let g4 = 4 * h_dim;

    let x2 = x
        .view()
        .into_shape_with_order((t_len * batch, input))
        .expect("standard layout reshape");
    let xproj = x2.dot(&wx.t());

    let mut gates = Array3::<F>::zeros((t_len, batch, g4));
    let mut cells = Array3::<F>::zeros((t_len, batch, h_dim));
    let mut tanh_c = Array3::<F>::zeros((t_len, batch, h_dim));
    let mut h_all = Array3::<F>::zeros((t_len, batch, h_dim));

    let steps: Vec<usize> =
        if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    let mut h_prev = Array2::<F>::zeros((batch, h_dim));
    let mut c_prev = vec![F::zero(); batch * h_dim];
    for &t in &steps {
        let mut z = xproj.slice(s![t * batch..(t + 1) * batch, ..]).to_owned();
        z += &h_prev.dot(&wh.t());
        z += &b;
        {
            let zs = z.as_slice().expect("standard layout");
            let gs = gates.as_slice_mut().expect("standard layout");
            let cs = cells.as_slice_mut().expect("standard layout");
            let ts = tanh_c.as_slice_mut().expect("standard layout");
            let hs = h_all.as_slice_mut().expect("standard layout");
            let hp = h_prev.as_slice_mut().expect("standard layout");
            for bi in 0..batch {
                let zo = bi * g4;
                let go = (t * batch + bi) * g4;
                let ho = (t * batch + bi) * h_dim;
                let co = bi * h_dim;
                for j in 0..h_dim {
                    let i_ = sigmoid(zs[zo + j]);
                    let f_ = sigmoid(zs[zo + h_dim + j]);
                    let g_ = zs[zo + 2 * h_dim + j].tanh();
                    let o_ = sigmoid(zs[zo + 3 * h_dim + j]);
                    let c = f_ * c_prev[co + j] + i_ * g_;
                    let tc = c.tanh();
                    gs[go + j] = i_;
                    gs[go + h_dim + j] = f_;
                    gs[go + 2 * h_dim + j] = g_;
                    gs[go + 3 * h_dim + j] = o_;
                    cs[ho + j] = c;
                    ts[ho + j] = tc;
                    hs[ho + j] = o_ * tc;
                    c_prev[co + j] = c;
                    hp[co + j] = o_ * tc;
                }
            }
        }
    }
    DirTape { gates, cells, tanh_c, h: h_all }
}

fn backward_direction<F: NdFloat>(
    x: &Array3<F>,
    tape: &DirTape<F>,
    wx: ArrayView2<F>,
    wh: ArrayView2<F>,
    dh_out: ArrayView3<F>,
    reverse: bool,
) -> (Array2<F>, Array2<F>, Array1<F>, Array3<F>) {
    let (t_len, batch, input) = x.dim();
    let h_dim = wh.shape()[1];
    let g4 = 4 * h_dim;
    let steps: Vec<usize> =
        if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };

    // h_{t-1} in forward processing order, for the recurrent weight grad
    let mut hprev_all = Array3::<F>::zeros((t_len, batch, h_dim));
    for k in 1..t_len {
        let t = steps[k];
        let p = steps[k - 1];
        hprev_all.slice_mut(s![t, .., ..]).assign(&tape.h.slice(s![p, .., ..]));
    }

    let mut da_all = Array3::<F>::zeros((t_len, batch, g4));
    let mut dh_rec = Array2::<F>::zeros((batch, h_dim));
    let mut dc = vec![F::zero(); batch * h_dim];
    for k in (0..t_len).rev() {
        let t = steps[k];
        {
            let gs = tape.gates.as_slice().expect("standard layout");
            let cs = tape.cells.as_slice().expect("standard layout");
            let ts = tape.tanh_c.as_slice().expect("standard layout");
            let das = da_all.as_slice_mut().expect("standard layout");
            let dhr = dh_rec.as_slice().expect("standard layout");
            for bi in 0..batch {
                let go = (t * batch + bi) * g4;
                let ho = (t * batch + bi) * h_dim;
                let co = bi * h_dim;
                let cpo = if k == 0 { None } else { Some((steps[k - 1] * batch + bi) * h_dim) };
                for j in 0..h_dim {
                    let i_ = gs[go + j];
                    let f_ = gs[go + h_dim + j];
                    let g_ = gs[go + 2 * h_dim + j];
                    let o_ = gs[go + 3 * h_dim + j];
                    let tc = ts[ho + j];
                    let c_prev = match cpo {
                        Some(off) => cs[off + j],
                        None => F::zero(),
                    };
                    let dh = dh_out[[t, bi, j]] + dhr[co + j];
                    let dcij = dh * o_ * (F::one() - tc * tc) + dc[co + j];
                    das[go + j] = dcij * g_ * i_ * (F::one() - i_);
                    das[go + h_dim + j] = dcij * c_prev * f_ * (F::one() - f_);
                    das[go + 2 * h_dim + j] = dcij * i_ * (F::one() - g_ * g_);
                    das[go + 3 * h_dim + j] = dh * tc * o_ * (F::one() - o_);
                    dc[co + j] = dcij * f_;
                }
            }
        }
        let da_t = da_all.slice(s![t, .., ..]);
        dh_rec = da_t.dot(&wh);
    }

    let da2 = da_all
        .view()
        .into_shape_with_order((t_len * batch, g4))
        .expect("standard layout reshape");
    let x2 = x
        .view()
        .into_shape_with_order((t_len * batch, input))
        .expect("standard layout reshape");
    let hp2 = hprev_all
        .view()
        .into_shape_with_order((t_len * batch, h_dim))
        .expect("standard layout reshape");
    let dwx = da2.t().dot(&x2);
    let dwh = da2.t().dot(&hp2);
    let db = da2.sum_axis(ndarray::Axis(0));
    let dx = da2
        .dot(&wx)
        .into_shape_with_order((t_len, batch, input))
        .expect("reshape input gradient");
    (dwx, dwh, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> MaskNetConfig {
        MaskNetConfig {
            input_bins: 16,
            recurrent_layers: 2,
            hidden_units_per_direction: 8,
            bidirectional: true,
            dropout_probability: 0.30,
        }
    }

    fn random_features(t: usize, b: usize, bins: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array3::zeros((t, b, bins));
        for v in x.iter_mut() {
            *v = rng.random_range(0.0..2.0);
        }
        x
    }

    #[test]
    fn mask_entries_stay_in_the_open_unit_interval() {
        let net = MaskNet::<f64>::new(tiny_config(), 3).unwrap();
        let x = random_features(5, 2, 16, 11);
        let tape = net.forward_batch(&x, None).unwrap();
        assert!(tape.mask.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn zero_weight_network_outputs_one_half() {
        let mut net = MaskNet::<f64>::new(tiny_config(), 3).unwrap();
        for p in net.parameters_mut() {
            *p = 0.0;
        }
        let x = random_features(4, 1, 16, 5);
        let tape = net.forward_batch(&x, None).unwrap();
        assert!(tape.mask.iter().all(|&m| (m - 0.5).abs() < 1e-12));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = MaskNet::<f64>::new(tiny_config(), 9).unwrap();
        let feats = random_features(6, 1, 16, 2)
            .into_shape_with_order((6, 16))
            .unwrap();
        let a = net.forward(&feats).unwrap();
        let b = net.forward(&feats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = MaskNet::<f64>::new(tiny_config(), 9).unwrap();
        let x = random_features(5, 1, 12, 0);
        assert!(matches!(
            net.forward_batch(&x, None),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn training_forward_without_rng_is_rejected() {
        let mut net = MaskNet::<f64>::new(tiny_config(), 9).unwrap();
        net.set_training(true);
        let x = random_features(5, 1, 16, 0);
        assert!(net.forward_batch(&x, None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.forward_batch(&x, Some(&mut rng)).is_ok());
    }

    #[test]
    fn dropout_changes_between_draws_but_not_eval() {
        let mut net = MaskNet::<f64>::new(tiny_config(), 9).unwrap();
        net.set_training(true);
        let x = random_features(6, 2, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = net.forward_batch(&x, Some(&mut rng)).unwrap();
        let b = net.forward_batch(&x, Some(&mut rng)).unwrap();
        assert_ne!(a.mask, b.mask);

        net.set_training(false);
        let c = net.forward_batch(&x, None).unwrap();
        let d = net.forward_batch(&x, None).unwrap();
        assert_eq!(c.mask, d.mask);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 12;
        let q = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..=i {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "rows {i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn unidirectional_config_works() {
        let config = MaskNetConfig {
            bidirectional: false,
            ..tiny_config()
        };
        let net = MaskNet::<f64>::new(config, 1).unwrap();
        let x = random_features(5, 2, 16, 11);
        let tape = net.forward_batch(&x, None).unwrap();
        assert_eq!(tape.mask.dim(), (5, 2, 16));
    }
}
