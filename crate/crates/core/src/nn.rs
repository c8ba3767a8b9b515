//! Parameter storage and the small set of layers the models are built from.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::ConvGeometry;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

/// A named tensor plus the logical dimensions it is serialized with.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub tensor: Tensor<T>,
    pub role: ParamRole,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, dims: Vec<usize>, tensor: Tensor<T>, role: ParamRole) -> ParamId {
        debug_assert_eq!(dims.iter().product::<usize>(), tensor.numel());
        let mut tensor = tensor;
        tensor.set_requires_grad(role.trainable());
        self.params.push(Param {
            name: name.into(),
            dims,
            tensor,
            role,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role.trainable())
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Copies values from `other` by name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Validation(format!("missing parameter {}", p.name)))?;
            if src.dims != p.dims {
                return Err(Error::Validation(format!(
                    "parameter {} has dims {:?}, expected {:?}",
                    p.name, src.dims, p.dims
                )));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    tensor: p.tensor.cast(),
                    role: p.role,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// Running-statistic update requested by a batch-norm layer in training mode.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// One forward pass: a tape plus lazily bound parameters.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_params: bool,
    updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            track_params: true,
            updates: Vec::new(),
        }
    }

    /// Parameters enter the tape as constants (inference).
    pub fn frozen(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Session {
            track_params: false,
            ..Session::new(store, mode)
        }
    }

    /// Continues recording on an existing tape.
    pub fn with_tape(tape: Tape<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape,
            ..Session::new(store, mode)
        }
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }

    /// Uses `v` in place of parameter `id` for the rest of the pass.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let mut t = p.tensor.clone();
        t.zero_grad();
        let v = if self.track_params && p.role.trainable() {
            self.tape.input(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bindings(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    pub fn take_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.updates)
    }

    /// Writes gradients of bound parameters into a store's grad slots.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Vec<T>)> {
        self.bindings()
            .filter_map(|(id, v)| grads.wrt(v).map(|g| (id, g.to_vec())))
            .collect()
    }
}

/// Applies collected gradients and running-stat updates to a store.
pub fn apply_pass<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: Vec<(ParamId, Vec<T>)>,
    updates: Vec<StatUpdate<T>>,
    momentum: T,
) -> Result<()> {
    for (id, g) in grads {
        store.get_mut(id).tensor.set_grad(g)?;
    }
    for u in updates {
        let keep = momentum;
        let take = T::one() - momentum;
        for (r, b) in store.get_mut(u.mean_id).tensor.data_mut().iter_mut().zip(&u.mean) {
            *r = keep * *r + take * *b;
        }
        for (r, b) in store.get_mut(u.var_id).tensor.data_mut().iter_mut().zip(&u.var) {
            *r = keep * *r + take * *b;
        }
    }
    Ok(())
}

/// Fan-in-scaled Gaussian, `std = sqrt(2 / fan_in)`.
fn he_normal<T: Scalar, R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Tensor<T> {
    let fan_in = dims[1] * dims[2] * dims[3];
    Tensor::randn(dims, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    /// `None` for pointwise convolutions.
    pub geom: Option<ConvGeometry>,
}

impl Conv {
    pub fn pointwise<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Conv {
        let weight = store.add(
            format!("{name}.weight"),
            vec![c_out, c_in],
            he_normal([c_out, c_in, 1, 1], rng),
            ParamRole::Weight,
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                vec![c_out],
                Tensor::zeros([c_out, 1, 1, 1]),
                ParamRole::Bias,
            )
        });
        Conv {
            weight,
            bias,
            geom: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn spatial<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Conv {
        let weight = store.add(
            format!("{name}.weight"),
            vec![c_out, c_in, kernel, kernel],
            he_normal([c_out, c_in, kernel, kernel], rng),
            ParamRole::Weight,
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                vec![c_out],
                Tensor::zeros([c_out, 1, 1, 1]),
                ParamRole::Bias,
            )
        });
        Conv {
            weight,
            bias,
            geom: Some(geom),
        }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = self.bias.map(|b| sess.param(b));
        match self.geom {
            None => sess.tape.conv1x1(x, w, b),
            Some(g) => sess.tape.conv2d(x, w, b, g),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> BatchNorm {
        let shape = [c, 1, 1, 1];
        BatchNorm {
            gamma: store.add(
                format!("{name}.gamma"),
                vec![c],
                Tensor::full(shape, T::one()),
                ParamRole::BnGamma,
            ),
            beta: store.add(format!("{name}.beta"), vec![c], Tensor::zeros(shape), ParamRole::BnBeta),
            running_mean: store.add(
                format!("{name}.running_mean"),
                vec![c],
                Tensor::zeros(shape),
                ParamRole::RunningMean,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                vec![c],
                Tensor::full(shape, T::one()),
                ParamRole::RunningVar,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = sess.param(self.gamma);
        let beta = sess.param(self.beta);
        match sess.mode {
            Mode::Train => {
                let node = sess.tape.batch_norm(x, gamma, beta, None)?;
                sess.updates.push(StatUpdate {
                    mean_id: self.running_mean,
                    var_id: self.running_var,
                    mean: node.mean,
                    var: node.var,
                });
                Ok(node.out)
            }
            Mode::Eval => {
                let store = sess.store;
                let mean = store.get(self.running_mean).tensor.data();
                let var = store.get(self.running_var).tensor.data();
                Ok(sess.tape.batch_norm(x, gamma, beta, Some((mean, var)))?.out)
            }
        }
    }
}

/// Convolution, optionally followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: Option<BatchNorm>,
}

impl ConvBlock {
    /// Pointwise conv -> BN -> ReLU, no conv bias.
    pub fn pointwise_bn_relu<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> ConvBlock {
        ConvBlock {
            conv: Conv::pointwise(store, &format!("{name}.conv"), c_in, c_out, false, rng),
            bn: Some(BatchNorm::new(store, &format!("{name}.bn"), c_out)),
        }
    }

    /// Linear pointwise conv with bias.
    pub fn pointwise_linear<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> ConvBlock {
        ConvBlock {
            conv: Conv::pointwise(store, &format!("{name}.conv"), c_in, c_out, true, rng),
            bn: None,
        }
    }

    /// 3x3 conv -> BN -> ReLU with "same" padding at the given stride.
    pub fn conv3x3_bn_relu<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> ConvBlock {
        let geom = ConvGeometry::new(stride, 1, 1);
        ConvBlock {
            conv: Conv::spatial(store, &format!("{name}.conv"), c_in, c_out, 3, geom, false, rng),
            bn: Some(BatchNorm::new(store, &format!("{name}.bn"), c_out)),
        }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(sess, x)?;
        match &self.bn {
            Some(bn) => {
                let y = bn.forward(sess, y)?;
                sess.tape.relu(y)
            }
            None => Ok(y),
        }
    }

    pub fn out_channels<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.conv.weight).dims[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_init_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = he_normal([64, 128, 1, 1], &mut rng);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64;
        assert!((var - 2.0 / 128.0).abs() < 0.1 * 2.0 / 128.0, "{var}");
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let block = ConvBlock::pointwise_bn_relu(&mut store, "b", 2, 2, &mut rng);
        let x = Tensor::<f64>::randn([2, 2, 3, 3], 1.0, &mut rng).map(|v| v + 5.0);
        let mut sess = Session::new(&store, Mode::Train);
        let xv = sess.tape.constant(x);
        block.forward(&mut sess, xv).unwrap();
        let updates = sess.take_updates();
        let batch_mean = updates[0].mean.clone();
        drop(sess);
        apply_pass(&mut store, vec![], updates, 0.9).unwrap();
        let bn = block.bn.as_ref().unwrap();
        let rm = store.get(bn.running_mean).tensor.data();
        for c in 0..2 {
            assert!((rm[c] - 0.1 * batch_mean[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn load_from_checks_dims() {
        let mut a = ParamStore::<f32>::new();
        a.add("w", vec![2, 2], Tensor::zeros([2, 2, 1, 1]), ParamRole::Weight);
        let mut b = ParamStore::<f32>::new();
        b.add("w", vec![4], Tensor::zeros([4, 1, 1, 1]), ParamRole::Weight);
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::<f32>::new();
        c.add("w", vec![2, 2], Tensor::full([2, 2, 1, 1], 3.0), ParamRole::Weight);
        a.load_from(&c).unwrap();
        assert!(a.get(ParamId(0)).tensor.data().iter().all(|&v| v == 3.0));
    }
}
