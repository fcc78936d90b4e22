//! Dense and convolutional networks, Adam, and gradient checking.
//!
//! Parameters of a network live in one flat vector (layer-major: weights
//! then biases per layer), so the optimizer, the model containers, and the
//! finite-difference checks all address them by plain index. Everything is
//! generic over `f32`/`f64`: training runs in `f32`, gradient checks
//! instantiate the same code in `f64` where a 1e-5 central difference is
//! meaningful.
//!
//! Conventions, fixed here and relied on by the trainers:
//! - per-example losses are means over output dimensions;
//! - gradients accumulate by summation over the examples of a batch;
//! - backprop takes the loss gradient with respect to the final layer's
//!   pre-activation, so cross-entropy on a sigmoid output stays finite in
//!   saturation;
//! - ReLU has derivative 0 at exactly 0;
//! - max-pooling keeps the first maximum in row-major scan order.

use rand::Rng;

/// Deterministic RNG used across training and synthesis code paths.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Float scalar the networks are generic over.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Machine epsilon; used to clamp probabilities away from 0 and 1 so
    /// that 1 − floor stays representable in the working precision.
    const EPSILON: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    /// Fused multiply-add, `self * a + b` with a single rounding. IEEE
    /// defines the fused result exactly, so every platform computes the
    /// same bits; on FMA hardware it is also the fastest path through the
    /// kernels below.
    fn mul_add(self, a: Self, b: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const EPSILON: Self = <$t>::EPSILON;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

fn sigmoid<T: Real>(z: T) -> T {
    T::ONE / (T::ONE + (-z).exp())
}

/// Dot product over sixteen independent fused multiply-add chains. The
/// fixed reassociation lets the compiler vectorize what a strictly
/// sequential sum would forbid, and the fused ops round once per element,
/// so the result is the same bits on every platform and every run.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 16];
    let chunks = a.len() / 16;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 16..(c + 1) * 16], &b[c * 16..(c + 1) * 16]);
        for k in 0..16 {
            acc[k] = xa[k].mul_add(xb[k], acc[k]);
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * 16..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let mut fold = [T::ZERO; 8];
    for k in 0..8 {
        fold[k] = acc[k] + acc[k + 8];
    }
    let s01 = fold[0] + fold[1];
    let s23 = fold[2] + fold[3];
    let s45 = fold[4] + fold[5];
    let s67 = fold[6] + fold[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Four dot products against one shared right-hand side. Each lane runs
/// the exact reduction of [`dot`], so the results match four separate
/// calls bit for bit while the shared side is read once per chunk.
fn dot4<T: Real>(a: [&[T]; 4], b: &[T]) -> [T; 4] {
    let n = b.len();
    let chunks = n / 16;
    let mut acc = [[T::ZERO; 16]; 4];
    for c in 0..chunks {
        let xb = &b[c * 16..(c + 1) * 16];
        for (e, a_e) in a.iter().enumerate() {
            let xa = &a_e[c * 16..(c + 1) * 16];
            for k in 0..16 {
                acc[e][k] = xa[k].mul_add(xb[k], acc[e][k]);
            }
        }
    }
    let mut out = [T::ZERO; 4];
    for (e, a_e) in a.iter().enumerate() {
        let mut tail = T::ZERO;
        for i in chunks * 16..n {
            tail = a_e[i].mul_add(b[i], tail);
        }
        let mut fold = [T::ZERO; 8];
        for k in 0..8 {
            fold[k] = acc[e][k] + acc[e][k + 8];
        }
        let s01 = fold[0] + fold[1];
        let s23 = fold[2] + fold[3];
        let s45 = fold[4] + fold[5];
        let s67 = fold[6] + fold[7];
        out[e] = ((s01 + s23) + (s45 + s67)) + tail;
    }
    out
}

fn glorot<T: Real>(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> T {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    T::from_f64(rng.gen_range(-limit..limit))
}

/// Per-example loss on a sigmoid output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean over outputs of (y − t)².
    MeanSquared,
    /// Mean over outputs of the Bernoulli cross-entropy.
    CrossEntropy,
}

impl Loss {
    pub fn value<T: Real>(self, output: &[T], target: &[T]) -> T {
        let n = T::from_f64(output.len() as f64);
        let mut acc = T::ZERO;
        match self {
            Loss::MeanSquared => {
                for (&y, &t) in output.iter().zip(target) {
                    let d = y - t;
                    acc += d * d;
                }
            }
            Loss::CrossEntropy => {
                let floor = T::EPSILON;
                for (&p, &t) in output.iter().zip(target) {
                    let p = clamp_unit(p, floor);
                    acc += -(t * p.ln() + (T::ONE - t) * (T::ONE - p).ln());
                }
            }
        }
        acc / n
    }

    /// Gradient with respect to the final pre-activation, assuming that
    /// final activation is the sigmoid.
    pub fn output_delta<T: Real>(self, output: &[T], target: &[T]) -> Vec<T> {
        let n = T::from_f64(output.len() as f64);
        match self {
            Loss::MeanSquared => output
                .iter()
                .zip(target)
                .map(|(&y, &t)| (y - t) * y * (T::ONE - y) * T::from_f64(2.0) / n)
                .collect(),
            Loss::CrossEntropy => output
                .iter()
                .zip(target)
                .map(|(&p, &t)| (p - t) / n)
                .collect(),
        }
    }
}

fn clamp_unit<T: Real>(p: T, floor: T) -> T {
    let hi = T::ONE - floor;
    if p < floor {
        floor
    } else if hi < p {
        hi
    } else {
        p
    }
}

/// Fully-connected network with a sigmoid after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Weights uniform in ±√(6/(fan_in+fan_out)), biases zero.
    pub fn new(sizes: &[usize], rng: &mut SeededRng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            for _ in 0..n_in * n_out {
                params.push(glorot(rng, n_in, n_out));
            }
            params.extend(std::iter::repeat(T::ZERO).take(n_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Self {
        assert_eq!(params.len(), Self::param_count(sizes));
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.forward_cached(input).pop().unwrap()
    }

    /// Activations per layer; element 0 is the input, the last the output.
    pub fn forward_cached(&self, input: &[T]) -> Vec<Vec<T>> {
        assert_eq!(input.len(), self.sizes[0]);
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let mut cursor = 0;
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[cursor..cursor + n_in * n_out];
            let biases = &self.params[cursor + n_in * n_out..cursor + n_in * n_out + n_out];
            cursor += n_in * n_out + n_out;
            let prev = acts.last().unwrap();
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &weights[j * n_in..(j + 1) * n_in];
                next.push(sigmoid(biases[j] + dot(row, prev)));
            }
            acts.push(next);
        }
        acts
    }

    /// Forward a whole batch, laid out example-major (`batch` rows of the
    /// layer width, contiguous). Iteration order per element matches
    /// [`forward_cached`](Self::forward_cached) exactly, so the results are
    /// bit-identical to single-example forwards; the batched layout exists
    /// because reusing each weight row across the batch is several times
    /// faster than streaming the whole matrix per example.
    pub fn forward_batch_cached(&self, inputs: &[T], batch: usize) -> Vec<Vec<T>> {
        assert_eq!(inputs.len(), batch * self.sizes[0]);
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(inputs.to_vec());
        let mut cursor = 0;
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[cursor..cursor + n_in * n_out];
            let biases = &self.params[cursor + n_in * n_out..cursor + n_in * n_out + n_out];
            cursor += n_in * n_out + n_out;
            let prev = acts.last().unwrap();
            let mut next = vec![T::ZERO; batch * n_out];
            let mut b = 0;
            while b + 4 <= batch {
                let xs = [
                    &prev[b * n_in..(b + 1) * n_in],
                    &prev[(b + 1) * n_in..(b + 2) * n_in],
                    &prev[(b + 2) * n_in..(b + 3) * n_in],
                    &prev[(b + 3) * n_in..(b + 4) * n_in],
                ];
                for j in 0..n_out {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    let d = dot4(xs, row);
                    for (e, &v) in d.iter().enumerate() {
                        next[(b + e) * n_out + j] = sigmoid(biases[j] + v);
                    }
                }
                b += 4;
            }
            while b < batch {
                let x = &prev[b * n_in..(b + 1) * n_in];
                for j in 0..n_out {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    next[b * n_out + j] = sigmoid(biases[j] + dot(row, x));
                }
                b += 1;
            }
            acts.push(next);
        }
        acts
    }

    /// Batched counterpart of [`backprop`](Self::backprop): accumulates the
    /// summed gradients of the whole batch into `grads`, adding per element
    /// in example order, so the result is bit-identical to accumulating the
    /// examples one at a time.
    pub fn backprop_batch(&self, acts: &[Vec<T>], dz_last: &[T], batch: usize, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let layer_count = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layer_count);
        let mut cursor = 0;
        for w in self.sizes.windows(2) {
            offsets.push(cursor);
            cursor += w[0] * w[1] + w[1];
        }

        let mut delta = dz_last.to_vec();
        for l in (0..layer_count).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = offsets[l];
            let b_off = w_off + n_in * n_out;
            let a_prev = &acts[l];
            let (left, right) = grads.split_at_mut(b_off);
            let wgrads = &mut left[w_off..];
            let bgrads = &mut right[..n_out];
            let mut b = 0;
            while b + 4 <= batch {
                let xs = [
                    &a_prev[b * n_in..(b + 1) * n_in],
                    &a_prev[(b + 1) * n_in..(b + 2) * n_in],
                    &a_prev[(b + 2) * n_in..(b + 3) * n_in],
                    &a_prev[(b + 3) * n_in..(b + 4) * n_in],
                ];
                for j in 0..n_out {
                    let d = [
                        delta[b * n_out + j],
                        delta[(b + 1) * n_out + j],
                        delta[(b + 2) * n_out + j],
                        delta[(b + 3) * n_out + j],
                    ];
                    bgrads[j] += d[0];
                    bgrads[j] += d[1];
                    bgrads[j] += d[2];
                    bgrads[j] += d[3];
                    let grow = &mut wgrads[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] = d[3].mul_add(
                            xs[3][i],
                            d[2].mul_add(
                                xs[2][i],
                                d[1].mul_add(xs[1][i], d[0].mul_add(xs[0][i], grow[i])),
                            ),
                        );
                    }
                }
                b += 4;
            }
            while b < batch {
                let x = &a_prev[b * n_in..(b + 1) * n_in];
                for j in 0..n_out {
                    let dj = delta[b * n_out + j];
                    bgrads[j] += dj;
                    let grow = &mut wgrads[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] = dj.mul_add(x[i], grow[i]);
                    }
                }
                b += 1;
            }
            if l > 0 {
                let weights = &self.params[w_off..b_off];
                let mut d_prev = vec![T::ZERO; batch * n_in];
                let mut j = 0;
                while j + 4 <= n_out {
                    let rows = [
                        &weights[j * n_in..(j + 1) * n_in],
                        &weights[(j + 1) * n_in..(j + 2) * n_in],
                        &weights[(j + 2) * n_in..(j + 3) * n_in],
                        &weights[(j + 3) * n_in..(j + 4) * n_in],
                    ];
                    for b in 0..batch {
                        let d = [
                            delta[b * n_out + j],
                            delta[b * n_out + j + 1],
                            delta[b * n_out + j + 2],
                            delta[b * n_out + j + 3],
                        ];
                        let drow = &mut d_prev[b * n_in..(b + 1) * n_in];
                        for i in 0..n_in {
                            drow[i] = d[3].mul_add(
                                rows[3][i],
                                d[2].mul_add(
                                    rows[2][i],
                                    d[1].mul_add(rows[1][i], d[0].mul_add(rows[0][i], drow[i])),
                                ),
                            );
                        }
                    }
                    j += 4;
                }
                while j < n_out {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    for b in 0..batch {
                        let dj = delta[b * n_out + j];
                        let drow = &mut d_prev[b * n_in..(b + 1) * n_in];
                        for i in 0..n_in {
                            drow[i] = dj.mul_add(row[i], drow[i]);
                        }
                    }
                    j += 1;
                }
                for (d, &a) in d_prev.iter_mut().zip(a_prev.iter()) {
                    *d = *d * a * (T::ONE - a);
                }
                delta = d_prev;
            }
        }
    }

    /// Accumulate parameter gradients for one example into `grads`
    /// (batch-sum convention). `dz_last` is the loss gradient with respect
    /// to the final pre-activation, as produced by [`Loss::output_delta`].
    pub fn backprop(&self, acts: &[Vec<T>], dz_last: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let layer_count = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layer_count);
        let mut cursor = 0;
        for w in self.sizes.windows(2) {
            offsets.push(cursor);
            cursor += w[0] * w[1] + w[1];
        }

        let mut delta = dz_last.to_vec();
        for l in (0..layer_count).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = offsets[l];
            let b_off = w_off + n_in * n_out;
            let a_prev = &acts[l];
            for j in 0..n_out {
                let dj = delta[j];
                grads[b_off + j] += dj;
                let grow = &mut grads[w_off + j * n_in..w_off + (j + 1) * n_in];
                for i in 0..n_in {
                    grow[i] = dj.mul_add(a_prev[i], grow[i]);
                }
            }
            if l > 0 {
                let weights = &self.params[w_off..b_off];
                let mut d_prev = vec![T::ZERO; n_in];
                for j in 0..n_out {
                    let dj = delta[j];
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        d_prev[i] = dj.mul_add(row[i], d_prev[i]);
                    }
                }
                for (d, &a) in d_prev.iter_mut().zip(a_prev) {
                    *d = *d * a * (T::ONE - a);
                }
                delta = d_prev;
            }
        }
    }

    /// Maximum relative error between analytic gradients and central finite
    /// differences (step 1e-5) on `samples` randomly chosen parameters.
    pub fn gradient_check(
        &mut self,
        input: &[T],
        target: &[T],
        loss: Loss,
        samples: usize,
        rng: &mut SeededRng,
    ) -> f64 {
        let mut grads = vec![T::ZERO; self.params.len()];
        let acts = self.forward_cached(input);
        let delta = loss.output_delta(acts.last().unwrap(), target);
        self.backprop(&acts, &delta, &mut grads);

        let mut worst = 0.0f64;
        for _ in 0..samples {
            let idx = rng.gen_range(0..self.params.len());
            let fd = self.finite_difference(idx, input, target, loss);
            worst = worst.max(relative_error(grads[idx].to_f64(), fd));
        }
        worst
    }

    fn finite_difference(&mut self, idx: usize, input: &[T], target: &[T], loss: Loss) -> f64 {
        let h = T::from_f64(1e-5);
        let old = self.params[idx];
        self.params[idx] = old + h;
        let plus = loss.value(&self.forward(input), target).to_f64();
        self.params[idx] = old - h;
        let minus = loss.value(&self.forward(input), target).to_f64();
        self.params[idx] = old;
        (plus - minus) / (2.0 * h.to_f64())
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Adam over a flat parameter vector. Gradients are expected in the
/// batch-sum convention used by `backprop`.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    step: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(param_count: usize, step: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: vec![T::ZERO; param_count],
            v: vec![T::ZERO; param_count],
        }
    }

    /// Step 1e-3, β1 0.9, β2 0.999, ε 1e-8.
    pub fn standard(param_count: usize) -> Self {
        Self::new(param_count, 1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn apply(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t));
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let nb1 = T::from_f64(1.0 - self.beta1);
        let nb2 = T::from_f64(1.0 - self.beta2);
        let step = T::from_f64(self.step);
        let eps = T::from_f64(self.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = nb1.mul_add(g, b1 * self.m[i]);
            self.v[i] = (nb2 * g).mul_add(g, b2 * self.v[i]);
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= step * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Shape bookkeeping for the convolutional net. Kernels are 5×5 valid,
/// pools 2×2 non-overlapping; odd trailing rows or columns are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnShape {
    pub in_h: usize,
    pub in_w: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub labels: usize,
}

const KERNEL: usize = 5;

impl CnnShape {
    fn conv1_hw(&self) -> (usize, usize) {
        (self.in_h - KERNEL + 1, self.in_w - KERNEL + 1)
    }
    fn pool1_hw(&self) -> (usize, usize) {
        let (h, w) = self.conv1_hw();
        (h / 2, w / 2)
    }
    fn conv2_hw(&self) -> (usize, usize) {
        let (h, w) = self.pool1_hw();
        (h - KERNEL + 1, w - KERNEL + 1)
    }
    fn pool2_hw(&self) -> (usize, usize) {
        let (h, w) = self.conv2_hw();
        (h / 2, w / 2)
    }
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.pool2_hw();
        h * w * self.conv2
    }
    pub fn param_count(&self) -> usize {
        let conv1 = self.conv1 * KERNEL * KERNEL + self.conv1;
        let conv2 = self.conv2 * self.conv1 * KERNEL * KERNEL + self.conv2;
        let fc1 = self.hidden * self.flat_len() + self.hidden;
        let fc2 = self.labels * self.hidden + self.labels;
        conv1 + conv2 + fc1 + fc2
    }
    /// Offsets of (conv1 w, conv1 b, conv2 w, conv2 b, fc1 w, fc1 b,
    /// fc2 w, fc2 b) in the flat parameter vector.
    fn offsets(&self) -> [usize; 8] {
        let mut o = [0usize; 8];
        o[1] = o[0] + self.conv1 * KERNEL * KERNEL;
        o[2] = o[1] + self.conv1;
        o[3] = o[2] + self.conv2 * self.conv1 * KERNEL * KERNEL;
        o[4] = o[3] + self.conv2;
        o[5] = o[4] + self.hidden * self.flat_len();
        o[6] = o[5] + self.hidden;
        o[7] = o[6] + self.labels * self.hidden;
        o
    }
}

/// conv(relu) → pool → conv(relu) → pool → dense(relu) → dense(sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<T> {
    shape: CnnShape,
    params: Vec<T>,
}

/// Intermediate tensors of one forward pass, kept for backprop.
pub struct CnnTrace<T> {
    input: Vec<T>,
    a1: Vec<T>,
    p1: Vec<T>,
    p1_idx: Vec<usize>,
    a2: Vec<T>,
    p2: Vec<T>,
    p2_idx: Vec<usize>,
    h: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Real> Cnn<T> {
    pub fn new(shape: CnnShape, rng: &mut SeededRng) -> Self {
        assert!(shape.pool2_hw().0 >= 1 && shape.pool2_hw().1 >= 1, "input too small");
        let mut params = Vec::with_capacity(shape.param_count());
        let k2 = KERNEL * KERNEL;
        for _ in 0..shape.conv1 * k2 {
            params.push(glorot(rng, k2, shape.conv1 * k2));
        }
        params.extend(std::iter::repeat(T::ZERO).take(shape.conv1));
        for _ in 0..shape.conv2 * shape.conv1 * k2 {
            params.push(glorot(rng, shape.conv1 * k2, shape.conv2 * k2));
        }
        params.extend(std::iter::repeat(T::ZERO).take(shape.conv2));
        let flat = shape.flat_len();
        for _ in 0..shape.hidden * flat {
            params.push(glorot(rng, flat, shape.hidden));
        }
        params.extend(std::iter::repeat(T::ZERO).take(shape.hidden));
        for _ in 0..shape.labels * shape.hidden {
            params.push(glorot(rng, shape.hidden, shape.labels));
        }
        params.extend(std::iter::repeat(T::ZERO).take(shape.labels));
        Self { shape, params }
    }

    pub fn from_params(shape: CnnShape, params: Vec<T>) -> Self {
        assert_eq!(params.len(), shape.param_count());
        Self { shape, params }
    }

    pub fn shape(&self) -> CnnShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.forward_cached(input).output
    }

    pub fn forward_cached(&self, input: &[T]) -> CnnTrace<T> {
        let s = self.shape;
        assert_eq!(input.len(), s.in_h * s.in_w);
        let o = s.offsets();
        let (c1h, c1w) = s.conv1_hw();
        let mut a1 = conv_valid(
            input,
            1,
            s.in_h,
            s.in_w,
            &self.params[o[0]..o[1]],
            &self.params[o[1]..o[2]],
            s.conv1,
        );
        relu_in_place(&mut a1);
        let (p1, p1_idx) = maxpool2(&a1, s.conv1, c1h, c1w);
        let (p1h, p1w) = s.pool1_hw();
        let (c2h, c2w) = s.conv2_hw();
        let mut a2 = conv_valid(
            &p1,
            s.conv1,
            p1h,
            p1w,
            &self.params[o[2]..o[3]],
            &self.params[o[3]..o[4]],
            s.conv2,
        );
        relu_in_place(&mut a2);
        let (p2, p2_idx) = maxpool2(&a2, s.conv2, c2h, c2w);

        let mut h = dense(
            &p2,
            &self.params[o[4]..o[5]],
            &self.params[o[5]..o[6]],
            s.hidden,
        );
        relu_in_place(&mut h);
        let mut output = dense(
            &h,
            &self.params[o[6]..o[7]],
            &self.params[o[7]..],
            s.labels,
        );
        for y in output.iter_mut() {
            *y = sigmoid(*y);
        }
        CnnTrace {
            input: input.to_vec(),
            a1,
            p1,
            p1_idx,
            a2,
            p2,
            p2_idx,
            h,
            output,
        }
    }

    /// Accumulate gradients for one example (batch-sum convention).
    /// `dz_out` is the loss gradient with respect to the final
    /// pre-activation.
    pub fn backprop(&self, trace: &CnnTrace<T>, dz_out: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let s = self.shape;
        let o = s.offsets();

        // Output dense layer.
        let mut dh = vec![T::ZERO; s.hidden];
        for j in 0..s.labels {
            let dj = dz_out[j];
            grads[o[7] + j] += dj;
            let row = &self.params[o[6] + j * s.hidden..o[6] + (j + 1) * s.hidden];
            let grow = &mut grads[o[6] + j * s.hidden..o[6] + (j + 1) * s.hidden];
            for i in 0..s.hidden {
                grow[i] += dj * trace.h[i];
                dh[i] += dj * row[i];
            }
        }
        for (d, &a) in dh.iter_mut().zip(&trace.h) {
            if !(a > T::ZERO) {
                *d = T::ZERO;
            }
        }

        // Hidden dense layer.
        let flat = s.flat_len();
        let mut dp2 = vec![T::ZERO; flat];
        for j in 0..s.hidden {
            let dj = dh[j];
            grads[o[5] + j] += dj;
            let row = &self.params[o[4] + j * flat..o[4] + (j + 1) * flat];
            let grow = &mut grads[o[4] + j * flat..o[4] + (j + 1) * flat];
            for i in 0..flat {
                grow[i] += dj * trace.p2[i];
                dp2[i] += dj * row[i];
            }
        }

        // Second pool and conv.
        let (c2h, c2w) = s.conv2_hw();
        let mut da2 = vec![T::ZERO; s.conv2 * c2h * c2w];
        for (slot, &src) in trace.p2_idx.iter().enumerate() {
            da2[src] += dp2[slot];
        }
        for (d, &a) in da2.iter_mut().zip(&trace.a2) {
            if !(a > T::ZERO) {
                *d = T::ZERO;
            }
        }
        let (p1h, p1w) = s.pool1_hw();
        let mut dp1 = vec![T::ZERO; s.conv1 * p1h * p1w];
        conv_backward(
            &trace.p1,
            s.conv1,
            p1h,
            p1w,
            &self.params[o[2]..o[3]],
            &da2,
            s.conv2,
            c2h,
            c2w,
            &mut grads[o[2]..o[4]],
            Some(&mut dp1),
        );

        // First pool and conv.
        let (c1h, c1w) = s.conv1_hw();
        let mut da1 = vec![T::ZERO; s.conv1 * c1h * c1w];
        for (slot, &src) in trace.p1_idx.iter().enumerate() {
            da1[src] += dp1[slot];
        }
        for (d, &a) in da1.iter_mut().zip(&trace.a1) {
            if !(a > T::ZERO) {
                *d = T::ZERO;
            }
        }
        conv_backward(
            &trace.input,
            1,
            s.in_h,
            s.in_w,
            &self.params[o[0]..o[1]],
            &da1,
            s.conv1,
            c1h,
            c1w,
            &mut grads[o[0]..o[2]],
            None,
        );
    }

    /// Finite-difference check over `samples` parameters drawn from every
    /// layer range, so conv kernels are exercised despite the dense layers
    /// holding most parameters.
    pub fn gradient_check(
        &mut self,
        input: &[T],
        target: &[T],
        loss: Loss,
        samples: usize,
        rng: &mut SeededRng,
    ) -> f64 {
        let mut grads = vec![T::ZERO; self.params.len()];
        let trace = self.forward_cached(input);
        let delta = loss.output_delta(&trace.output, target);
        self.backprop(&trace, &delta, &mut grads);

        let o = self.shape.offsets();
        let mut bounds: Vec<(usize, usize)> = o
            .windows(2)
            .map(|w| (w[0], w[1]))
            .collect();
        bounds.push((o[7], self.params.len()));

        let h = T::from_f64(1e-5);
        let mut worst = 0.0f64;
        for (lo, hi) in bounds {
            for _ in 0..samples.div_ceil(8) {
                let idx = rng.gen_range(lo..hi);
                let old = self.params[idx];
                self.params[idx] = old + h;
                let plus = loss.value(&self.forward(input), target).to_f64();
                self.params[idx] = old - h;
                let minus = loss.value(&self.forward(input), target).to_f64();
                self.params[idx] = old;
                let fd = (plus - minus) / (2.0 * h.to_f64());
                worst = worst.max(relative_error(grads[idx].to_f64(), fd));
            }
        }
        worst
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if !(*x > T::ZERO) {
            *x = T::ZERO;
        }
    }
}

fn dense<T: Real>(input: &[T], weights: &[T], biases: &[T], n_out: usize) -> Vec<T> {
    let n_in = input.len();
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let row = &weights[j * n_in..(j + 1) * n_in];
        out.push(biases[j] + dot(row, input));
    }
    out
}

/// Valid cross-correlation; input and output are channel-major [c][y][x].
/// Kernel layout: [out_c][in_c][ky][kx].
fn conv_valid<T: Real>(
    input: &[T],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kernels: &[T],
    biases: &[T],
    out_c: usize,
) -> Vec<T> {
    let (oh, ow) = (in_h - KERNEL + 1, in_w - KERNEL + 1);
    let mut out = vec![T::ZERO; out_c * oh * ow];
    for k in 0..out_c {
        for c in 0..in_c {
            let kern = &kernels[(k * in_c + c) * KERNEL * KERNEL..(k * in_c + c + 1) * KERNEL * KERNEL];
            let chan = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::ZERO;
                    for ky in 0..KERNEL {
                        let irow = &chan[(oy + ky) * in_w + ox..(oy + ky) * in_w + ox + KERNEL];
                        let krow = &kern[ky * KERNEL..(ky + 1) * KERNEL];
                        for kx in 0..KERNEL {
                            acc = krow[kx].mul_add(irow[kx], acc);
                        }
                    }
                    out[(k * oh + oy) * ow + ox] += acc;
                }
            }
        }
        for slot in out[k * oh * ow..(k + 1) * oh * ow].iter_mut() {
            *slot += biases[k];
        }
    }
    out
}

/// Gradients of a valid cross-correlation: accumulates kernel and bias
/// gradients into `grads` (kernels then biases) and, when given, the
/// gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    input: &[T],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kernels: &[T],
    d_out: &[T],
    out_c: usize,
    oh: usize,
    ow: usize,
    grads: &mut [T],
    mut d_input: Option<&mut Vec<T>>,
) {
    let k2 = KERNEL * KERNEL;
    let (gk, gb) = grads.split_at_mut(out_c * in_c * k2);
    for k in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = d_out[(k * oh + oy) * ow + ox];
                gb[k] += g;
                for c in 0..in_c {
                    let chan = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
                    let gkern = &mut gk[(k * in_c + c) * k2..(k * in_c + c + 1) * k2];
                    for ky in 0..KERNEL {
                        let irow = &chan[(oy + ky) * in_w + ox..(oy + ky) * in_w + ox + KERNEL];
                        let grow = &mut gkern[ky * KERNEL..(ky + 1) * KERNEL];
                        for kx in 0..KERNEL {
                            grow[kx] = g.mul_add(irow[kx], grow[kx]);
                        }
                    }
                    if let Some(di) = d_input.as_deref_mut() {
                        let kern = &kernels[(k * in_c + c) * k2..(k * in_c + c + 1) * k2];
                        let dchan = &mut di[c * in_h * in_w..(c + 1) * in_h * in_w];
                        for ky in 0..KERNEL {
                            let drow = &mut dchan[(oy + ky) * in_w + ox..(oy + ky) * in_w + ox + KERNEL];
                            let krow = &kern[ky * KERNEL..(ky + 1) * KERNEL];
                            for kx in 0..KERNEL {
                                drow[kx] = g.mul_add(krow[kx], drow[kx]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling; also returns, per pooled slot, the flat index of the
/// chosen element (first maximum in row-major order) for unpooling.
fn maxpool2<T: Real>(input: &[T], chans: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(chans * ph * pw);
    let mut idx = Vec::with_capacity(chans * ph * pw);
    for c in 0..chans {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = (c * h + 2 * py) * w + 2 * px;
                let mut best_v = input[best];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (c * h + 2 * py + dy) * w + 2 * px + dx;
                    if input[cand] > best_v {
                        best_v = input[cand];
                        best = cand;
                    }
                }
                out.push(best_v);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }

    #[test]
    fn zero_parameter_mlp_outputs_half_everywhere() {
        let mut net: Mlp<f64> = Mlp::new(&[5, 7, 3], &mut rng(1));
        for p in net.params_mut() {
            *p = 0.0;
        }
        let out = net.forward(&[0.3, -2.0, 5.0, 0.0, 1.0]);
        assert!(out.iter().all(|&y| y == 0.5));
    }

    #[test]
    fn mlp_outputs_stay_strictly_inside_unit_interval() {
        for seed in 0..5 {
            let net: Mlp<f64> = Mlp::new(&[5, 20, 11], &mut rng(seed));
            let mut r = rng(seed + 100);
            for _ in 0..20 {
                let input: Vec<f64> = (0..5).map(|_| r.gen_range(-10.0..10.0)).collect();
                for &y in &net.forward(&input) {
                    assert!(y > 0.0 && y < 1.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_net_and_output() {
        let a: Mlp<f32> = Mlp::new(&[5, 500, 500, 326], &mut rng(42));
        let b: Mlp<f32> = Mlp::new(&[5, 500, 500, 326], &mut rng(42));
        assert_eq!(a.params(), b.params());
        let input = [0.5f32, -0.25, 0.9, -0.9, 0.1];
        assert_eq!(a.forward(&input), b.forward(&input));
    }

    #[test]
    fn small_mlp_gradient_matches_finite_differences() {
        let mut net: Mlp<f64> = Mlp::new(&[5, 11, 7], &mut rng(7));
        let mut r = rng(8);
        let input: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..7).map(|_| r.gen_range(0.0..1.0)).collect();
        let count = net.params().len();
        for loss in [Loss::MeanSquared, Loss::CrossEntropy] {
            let err = net.gradient_check(&input, &target, loss, count, &mut r);
            assert!(err < 1e-4, "{loss:?}: max relative error {err:.3e}");
        }
    }

    #[test]
    fn full_size_mlp_gradient_spot_check() {
        let mut net: Mlp<f64> = Mlp::new(&[5, 500, 500, 326], &mut rng(11));
        let input = [0.8, -0.3, 0.55, -0.95, 0.2];
        let target: Vec<f64> = (0..326).map(|k| if k == 17 { 1.0 } else { 0.01 }).collect();
        let err = net.gradient_check(&input, &target, Loss::MeanSquared, 40, &mut rng(12));
        assert!(err < 1e-4, "max relative error {err:.3e}");
    }

    #[test]
    fn batched_pass_is_bit_identical_to_single_example_passes() {
        let net: Mlp<f32> = Mlp::new(&[5, 19, 13], &mut rng(15));
        let mut r = rng(16);
        let batch = 7;
        let inputs: Vec<f32> = (0..batch * 5).map(|_| r.gen_range(-2.0..2.0)).collect();
        let targets: Vec<f32> = (0..batch * 13).map(|_| r.gen_range(0.0..1.0)).collect();

        let acts = net.forward_batch_cached(&inputs, batch);
        let output = acts.last().unwrap();
        let mut deltas = vec![0f32; batch * 13];
        let mut grads_batched = vec![0f32; net.params().len()];
        for b in 0..batch {
            let d = Loss::MeanSquared.output_delta(
                &output[b * 13..(b + 1) * 13],
                &targets[b * 13..(b + 1) * 13],
            );
            deltas[b * 13..(b + 1) * 13].copy_from_slice(&d);
        }
        net.backprop_batch(&acts, &deltas, batch, &mut grads_batched);

        let mut grads_single = vec![0f32; net.params().len()];
        for b in 0..batch {
            let acts1 = net.forward_cached(&inputs[b * 5..(b + 1) * 5]);
            for (layer, batched) in acts1.iter().zip(&acts) {
                let width = layer.len();
                assert_eq!(&batched[b * width..(b + 1) * width], layer.as_slice());
            }
            let d = Loss::MeanSquared.output_delta(
                acts1.last().unwrap(),
                &targets[b * 13..(b + 1) * 13],
            );
            net.backprop(&acts1, &d, &mut grads_single);
        }
        assert_eq!(grads_batched, grads_single);
    }

    #[test]
    fn duplicated_example_doubles_the_gradient_exactly() {
        let net: Mlp<f64> = Mlp::new(&[5, 9, 4], &mut rng(3));
        let input = [0.1, 0.2, -0.3, 0.4, -0.5];
        let target = [0.9, 0.1, 0.5, 0.0];
        let acts = net.forward_cached(&input);
        let delta = Loss::MeanSquared.output_delta(acts.last().unwrap(), &target);

        let mut once = vec![0.0; net.params().len()];
        net.backprop(&acts, &delta, &mut once);
        let mut twice = vec![0.0; net.params().len()];
        net.backprop(&acts, &delta, &mut twice);
        net.backprop(&acts, &delta, &mut twice);

        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn zero_input_and_target_leave_first_layer_weights_without_gradient() {
        let net: Mlp<f64> = Mlp::new(&[5, 9, 4], &mut rng(4));
        let input = [0.0; 5];
        let target = [0.0; 4];
        let acts = net.forward_cached(&input);
        let delta = Loss::MeanSquared.output_delta(acts.last().unwrap(), &target);
        let mut grads = vec![0.0; net.params().len()];
        net.backprop(&acts, &delta, &mut grads);
        for &g in &grads[..5 * 9] {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn cross_entropy_delta_is_finite_in_saturation() {
        let output = [1.0f32, 0.0, 0.5];
        let target = [0.0f32, 1.0, 0.5];
        for d in Loss::CrossEntropy.output_delta(&output, &target) {
            assert!(d.is_finite());
        }
        assert!(Loss::CrossEntropy.value(&output, &target).is_finite());
    }

    #[test]
    fn adam_first_step_moves_by_signed_step_size() {
        let mut params = [1.0f64];
        let mut opt = Adam::standard(1);
        opt.apply(&mut params, &[0.3]);
        assert!((params[0] - (1.0 - 1e-3)).abs() < 1e-9);
        let mut params = [1.0f64];
        let mut opt = Adam::standard(1);
        opt.apply(&mut params, &[-250.0]);
        assert!((params[0] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_is_deterministic_for_identical_gradient_sequences() {
        let run = || {
            let mut params = vec![0.5f32, -0.5, 0.25];
            let mut opt = Adam::standard(3);
            for step in 0..100 {
                let g: Vec<f32> = (0..3).map(|i| ((step * 3 + i) as f32).sin()).collect();
                opt.apply(&mut params, &g);
            }
            params
        };
        assert_eq!(run(), run());
    }

    const TEST_SHAPE: CnnShape = CnnShape {
        in_h: 32,
        in_w: 25,
        conv1: 4,
        conv2: 6,
        hidden: 16,
        labels: 3,
    };

    #[test]
    fn zero_parameter_cnn_outputs_half() {
        let mut net: Cnn<f64> = Cnn::new(TEST_SHAPE, &mut rng(5));
        for p in net.params_mut() {
            *p = 0.0;
        }
        let input = vec![0.7; 32 * 25];
        let out = net.forward(&input);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|&y| y == 0.5));
    }

    #[test]
    fn cnn_outputs_stay_in_unit_interval_at_detector_size() {
        let shape = CnnShape {
            in_h: 128,
            in_w: 25,
            conv1: 16,
            conv2: 32,
            hidden: 128,
            labels: 6,
        };
        let net: Cnn<f32> = Cnn::new(shape, &mut rng(6));
        assert_eq!(shape.flat_len(), 29 * 3 * 32);
        let mut r = rng(61);
        let input: Vec<f32> = (0..128 * 25).map(|_| r.gen_range(0.0..1.0)).collect();
        let out = net.forward(&input);
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let mut net: Cnn<f64> = Cnn::new(TEST_SHAPE, &mut rng(9));
        let mut r = rng(10);
        let input: Vec<f64> = (0..32 * 25).map(|_| r.gen_range(0.0..1.0)).collect();
        let target = [1.0, 0.0, 1.0];
        for loss in [Loss::CrossEntropy, Loss::MeanSquared] {
            let err = net.gradient_check(&input, &target, loss, 160, &mut r);
            assert!(err < 1e-3, "{loss:?}: max relative error {err:.3e}");
        }
    }

    #[test]
    fn maxpool_keeps_first_maximum_and_its_index() {
        let input = vec![
            1.0, 5.0, 2.0, 2.0, //
            3.0, 5.0, 2.0, 1.0, //
            0.0, 0.0, 7.0, 7.0, //
            0.0, 0.0, 7.0, 7.0, //
        ];
        let (out, idx) = maxpool2(&input, 1, 4, 4);
        assert_eq!(out, vec![5.0, 2.0, 0.0, 7.0]);
        assert_eq!(idx, vec![1, 2, 8, 10]);
    }

    #[test]
    fn odd_trailing_rows_and_columns_are_dropped_by_pooling() {
        let input: Vec<f64> = (0..5 * 3).map(|i| i as f64).collect();
        let (out, _) = maxpool2(&input, 1, 5, 3);
        assert_eq!(out.len(), 2 * 1);
        assert_eq!(out, vec![4.0, 10.0]);
    }
}
