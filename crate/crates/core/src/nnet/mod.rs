//! Minimal differentiable networks: the conditional noise predictor and the
//! shape/camera regressor, with hand-written backward passes.
//!
//! All learnable scalars of both networks live in one flat [`ParamStore`]; the
//! manifest maps layer names to offsets so checkpoints can be inspected.

mod embedding;
mod gradcheck;
mod layers;

pub use embedding::{TimeEmbedding, TIME_EMBED_DIM};
pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_TOLERANCE};
pub use layers::{silu, silu_backward, Linear};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoisePredictor;
use crate::error::check_len;
use crate::{Error, Result};

pub const SHAPE_DIM: usize = 10;
pub const CAMERA_DIM: usize = 3;

/// One named entry of the parameter manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network dimensions. Both networks are fully determined by this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub pose_dim: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub bottleneck: usize,
    pub regressor_hidden: usize,
}

impl NetArch {
    /// Default denoiser for a 24-joint 6D pose conditioned on 24 keypoints.
    pub fn default_for(pose_dim: usize, cond_dim: usize) -> Self {
        NetArch {
            pose_dim,
            time_dim: TIME_EMBED_DIM,
            cond_dim,
            width: 256,
            blocks: 3,
            bottleneck: 48,
            regressor_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pose_dim", self.pose_dim),
            ("time_dim", self.time_dim),
            ("cond_dim", self.cond_dim),
            ("width", self.width),
            ("bottleneck", self.bottleneck),
            ("regressor_hidden", self.regressor_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("arch.{name}"), "must be positive"));
            }
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::config("arch.time_dim", "must be even"));
        }
        Ok(())
    }
}

/// Flat parameter storage plus its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub data: Vec<f64>,
    pub layers: Vec<LayerSpec>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Name of the layer that owns parameter `index`.
    pub fn owner(&self, index: usize) -> Option<&str> {
        self.layers
            .iter()
            .find(|l| (l.offset..l.offset + l.len()).contains(&index))
            .map(|l| l.name.as_str())
    }

    /// Rounds every parameter to the nearest f32, the precision checkpoints keep.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Layer handles for both networks.
#[derive(Debug, Clone)]
struct Layout {
    input: Linear,
    blocks: Vec<(Linear, Linear)>,
    head: Linear,
    reg: [Linear; 3],
    specs: Vec<LayerSpec>,
    total: usize,
}

impl Layout {
    fn new(arch: &NetArch) -> Self {
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, inputs: usize, outputs: usize| {
            let l = Linear {
                offset,
                inputs,
                outputs,
            };
            specs.push(LayerSpec {
                name: format!("{name}.weight"),
                offset,
                shape: vec![outputs, inputs],
            });
            specs.push(LayerSpec {
                name: format!("{name}.bias"),
                offset: offset + l.weight_len(),
                shape: vec![outputs],
            });
            offset += l.len();
            l
        };
        let in_dim = arch.pose_dim + arch.time_dim + arch.cond_dim;
        let input = add("denoiser.input".into(), in_dim, arch.width);
        let blocks = (0..arch.blocks)
            .map(|i| {
                (
                    add(format!("denoiser.block{i}.down"), arch.width, arch.bottleneck),
                    add(format!("denoiser.block{i}.up"), arch.bottleneck, arch.width),
                )
            })
            .collect();
        let head = add("denoiser.head".into(), arch.width, arch.pose_dim);
        let reg = [
            add("regressor.fc1".into(), arch.cond_dim, arch.regressor_hidden),
            add("regressor.fc2".into(), arch.regressor_hidden, arch.regressor_hidden),
            add("regressor.out".into(), arch.regressor_hidden, SHAPE_DIM + CAMERA_DIM),
        ];
        Layout {
            input,
            blocks,
            head,
            reg,
            specs,
            total: offset,
        }
    }
}

/// Intermediates of a denoiser forward pass.
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    input: Array2<f64>,
    /// Residual stream before each block, then after the last one.
    stream: Vec<Array2<f64>>,
    /// Bottleneck pre-activations per block.
    inner: Vec<Array2<f64>>,
}

/// Intermediates of a regressor forward pass.
#[derive(Debug, Clone)]
pub struct RegressorCache {
    z: Array2<f64>,
    pre1: Array2<f64>,
    pre2: Array2<f64>,
}

/// Regressor output split into shape coefficients and weak-perspective camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorOutput {
    /// `batch × 10`
    pub shape: Array2<f64>,
    /// `batch × 3`, columns `(s, t_x, t_y)`
    pub camera: Array2<f64>,
}

/// The denoiser f_ω(θ^(t), t, z) and the regressor R(z), sharing one store.
#[derive(Debug, Clone)]
pub struct Networks {
    arch: NetArch,
    layout: Layout,
    pub params: ParamStore,
}

impl Networks {
    /// All-zero parameters.
    pub fn zeros(arch: NetArch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let params = ParamStore {
            data: vec![0.0; layout.total],
            layers: layout.specs.clone(),
        };
        Ok(Networks {
            arch,
            layout,
            params,
        })
    }

    /// Fan-in-scaled uniform weights and zero biases. The denoiser head starts
    /// at zero so the initial prediction is ε̂ ≡ 0.
    pub fn init<R: Rng + ?Sized>(arch: NetArch, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let head = net.layout.head;
        let mut layers = vec![net.layout.input];
        for (d, u) in &net.layout.blocks {
            layers.push(*d);
            layers.push(*u);
        }
        layers.extend(net.layout.reg);
        for l in layers {
            net.fill_uniform(l, rng);
        }
        debug_assert!(net.params.data[head.offset..head.offset + head.len()]
            .iter()
            .all(|v| *v == 0.0));
        net.params.quantize_f32();
        Ok(net)
    }

    /// Like [`Networks::init`] but with a random head as well, so gradients
    /// reach every layer. Used for gradient checking.
    pub fn init_dense<R: Rng + ?Sized>(arch: NetArch, rng: &mut R) -> Result<Self> {
        let mut net = Self::init(arch, rng)?;
        let head = net.layout.head;
        net.fill_uniform(head, rng);
        for v in &mut net.params.data {
            // nonzero biases too
            if *v == 0.0 {
                *v = rng.random_range(-0.05..0.05);
            }
        }
        Ok(net)
    }

    fn fill_uniform<R: Rng + ?Sized>(&mut self, l: Linear, rng: &mut R) {
        let bound = 1.0 / (l.inputs as f64).sqrt();
        for v in &mut self.params.data[l.offset..l.offset + l.weight_len()] {
            *v = rng.random_range(-bound..bound);
        }
    }

    pub fn from_params(arch: NetArch, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        check_len("parameter blob", net.params.len(), params.len())?;
        net.params.data = params;
        Ok(net)
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameters belonging to the denoiser only.
    pub fn denoiser_param_count(&self) -> usize {
        self.layout.reg[0].offset
    }

    fn build_input(&self, x: &ArrayView2<f64>, t: &[usize], z: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let a = &self.arch;
        check_len("denoiser pose input", a.pose_dim, x.ncols())?;
        check_len("denoiser conditioning input", a.cond_dim, z.ncols())?;
        check_len("denoiser timestep count", x.nrows(), t.len())?;
        check_len("denoiser conditioning rows", x.nrows(), z.nrows())?;
        let b = x.nrows();
        let mut input = Array2::zeros((b, a.pose_dim + a.time_dim + a.cond_dim));
        input.slice_mut(s![.., ..a.pose_dim]).assign(x);
        for (i, &ti) in t.iter().enumerate() {
            let emb = TimeEmbedding::new(ti, a.time_dim);
            input
                .slice_mut(s![i, a.pose_dim..a.pose_dim + a.time_dim])
                .assign(&ndarray::ArrayView1::from(&emb.0));
        }
        input.slice_mut(s![.., a.pose_dim + a.time_dim..]).assign(z);
        Ok(input)
    }

    /// Predicted noise for a batch; row `i` uses timestep `t[i]` and
    /// conditioning row `z[i]`.
    pub fn denoiser_forward(
        &self,
        x: &ArrayView2<f64>,
        t: &[usize],
        z: &ArrayView2<f64>,
    ) -> Result<(Array2<f64>, DenoiserCache)> {
        let p = &self.params.data;
        let input = self.build_input(x, t, z)?;
        let mut h = self.layout.input.forward(p, &input.view());
        let mut stream = Vec::with_capacity(self.arch.blocks + 1);
        let mut inner = Vec::with_capacity(self.arch.blocks);
        for (down, up) in &self.layout.blocks {
            let pre = down.forward(p, &silu(&h).view());
            let delta = up.forward(p, &silu(&pre).view());
            let next = &h + &delta;
            stream.push(h);
            inner.push(pre);
            h = next;
        }
        let out = self.layout.head.forward(p, &silu(&h).view());
        stream.push(h);
        Ok((out, DenoiserCache { input, stream, inner }))
    }

    /// Accumulates `dL/dω` for the denoiser layers into `grads` and returns
    /// `dL/d(pose input)`.
    pub fn denoiser_backward(
        &self,
        cache: &DenoiserCache,
        d_out: &ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        check_len("gradient buffer", self.params.len(), grads.len())?;
        check_len("denoiser upstream gradient", self.arch.pose_dim, d_out.ncols())?;
        let p = &self.params.data;
        let last = cache.stream.last().expect("non-empty stream");
        let mut dh = self
            .layout
            .head
            .backward(p, grads, &silu(last).view(), d_out, true)
            .expect("input grad");
        silu_backward(last, &mut dh);
        for (i, (down, up)) in self.layout.blocks.iter().enumerate().rev() {
            let h = &cache.stream[i];
            let pre = &cache.inner[i];
            let mut dpre = up
                .backward(p, grads, &silu(pre).view(), &dh.view(), true)
                .expect("input grad");
            silu_backward(pre, &mut dpre);
            let mut da = down
                .backward(p, grads, &silu(h).view(), &dpre.view(), true)
                .expect("input grad");
            silu_backward(h, &mut da);
            dh += &da;
        }
        let d_input = self
            .layout
            .input
            .backward(p, grads, &cache.input.view(), &dh.view(), true)
            .expect("input grad");
        Ok(d_input.slice(s![.., ..self.arch.pose_dim]).to_owned())
    }

    pub fn regressor_forward(&self, z: &ArrayView2<f64>) -> Result<(RegressorOutput, RegressorCache)> {
        check_len("regressor input", self.arch.cond_dim, z.ncols())?;
        let p = &self.params.data;
        let [l1, l2, l3] = &self.layout.reg;
        let pre1 = l1.forward(p, z);
        let pre2 = l2.forward(p, &silu(&pre1).view());
        let out = l3.forward(p, &silu(&pre2).view());
        let shape = out.slice(s![.., ..SHAPE_DIM]).to_owned();
        let camera = out.slice(s![.., SHAPE_DIM..]).to_owned();
        Ok((
            RegressorOutput { shape, camera },
            RegressorCache {
                z: z.to_owned(),
                pre1,
                pre2,
            },
        ))
    }

    pub fn regressor_backward(
        &self,
        cache: &RegressorCache,
        d_shape: &ArrayView2<f64>,
        d_camera: &ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Result<()> {
        check_len("gradient buffer", self.params.len(), grads.len())?;
        check_len("shape gradient", SHAPE_DIM, d_shape.ncols())?;
        check_len("camera gradient", CAMERA_DIM, d_camera.ncols())?;
        let p = &self.params.data;
        let [l1, l2, l3] = &self.layout.reg;
        let d_out = ndarray::concatenate(Axis(1), &[d_shape.view(), d_camera.view()]).expect("same rows");
        let mut d2 = l3
            .backward(p, grads, &silu(&cache.pre2).view(), &d_out.view(), true)
            .expect("input grad");
        silu_backward(&cache.pre2, &mut d2);
        let mut d1 = l2
            .backward(p, grads, &silu(&cache.pre1).view(), &d2.view(), true)
            .expect("input grad");
        silu_backward(&cache.pre1, &mut d1);
        l1.backward(p, grads, &cache.z.view(), &d1.view(), false);
        Ok(())
    }
}

impl NoisePredictor for Networks {
    fn pose_dim(&self) -> usize {
        self.arch.pose_dim
    }

    fn cond_dim(&self) -> usize {
        self.arch.cond_dim
    }

    fn predict(&self, x: &Array2<f64>, t: usize, z: &[f64]) -> Result<Array2<f64>> {
        check_len("conditioning vector", self.arch.cond_dim, z.len())?;
        let zb = ndarray::ArrayView1::from(z)
            .broadcast((x.nrows(), z.len()))
            .expect("broadcast")
            .to_owned();
        let ts = vec![t; x.nrows()];
        Ok(self.denoiser_forward(&x.view(), &ts, &zb.view())?.0)
    }
}

/// Gradchecks both networks of `arch` on a random batch under the loss
/// `½‖ε̂ − e‖² + ½‖β̂ − b‖² + ½‖π̂ − c‖²` with random targets. Parameters are
/// densely initialized so that no layer starts with a vanishing gradient.
pub fn network_gradcheck(
    arch: NetArch,
    batch: usize,
    fd_step: f64,
    n_random: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::config("fd_step", "must be positive"));
    }
    if batch == 0 {
        return Err(Error::config("batch", "must be positive"));
    }
    let mut rng = crate::rng::stream(seed, &[]);
    let net = Networks::init_dense(arch, &mut rng)?;
    let mut mat = |c: usize| {
        Array2::from_shape_vec((batch, c), crate::rng::normal_vec(&mut rng, batch * c)).expect("shape")
    };
    let x = mat(arch.pose_dim);
    let z = mat(arch.cond_dim);
    let e = mat(arch.pose_dim);
    let b = mat(SHAPE_DIM);
    let c = mat(CAMERA_DIM);
    let ts: Vec<usize> = (0..batch).map(|i| 1 + (i * 37) % 100).collect();

    let (o, dc) = net.denoiser_forward(&x.view(), &ts, &z.view())?;
    let (r, rc) = net.regressor_forward(&z.view())?;
    let mut grads = vec![0.0; net.param_count()];
    net.denoiser_backward(&dc, &(&o - &e).view(), &mut grads)?;
    net.regressor_backward(&rc, &(&r.shape - &b).view(), &(&r.camera - &c).view(), &mut grads)?;

    let mut probe = net.clone();
    let loss = |p: &[f64]| {
        probe.params.data.copy_from_slice(p);
        let (o, _) = probe.denoiser_forward(&x.view(), &ts, &z.view()).expect("checked dims");
        let (r, _) = probe.regressor_forward(&z.view()).expect("checked dims");
        let sq = |a: Array2<f64>| 0.5 * a.iter().map(|v| v * v).sum::<f64>();
        sq(&o - &e) + sq(&r.shape - &b) + sq(&r.camera - &c)
    };
    Ok(gradcheck(&net.params, &grads, loss, fd_step, n_random, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream};

    fn small_arch() -> NetArch {
        NetArch {
            pose_dim: 6,
            time_dim: 4,
            cond_dim: 5,
            width: 8,
            blocks: 2,
            bottleneck: 3,
            regressor_hidden: 7,
        }
    }

    fn rand_mat(rng: &mut crate::rng::StreamRng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_vec((r, c), normal_vec(rng, r * c)).unwrap()
    }

    #[test]
    fn default_param_budget() {
        let net = Networks::zeros(NetArch::default_for(144, 72)).unwrap();
        assert!(net.denoiser_param_count() < 200_000, "{}", net.denoiser_param_count());
        let total: usize = net.params.layers.iter().map(|l| l.len()).sum();
        assert_eq!(total, net.param_count());
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let net = Networks::zeros(small_arch()).unwrap();
        let mut rng = stream(1, &[]);
        let x = rand_mat(&mut rng, 3, 6);
        let z = rand_mat(&mut rng, 3, 5);
        let (out, _) = net.denoiser_forward(&x.view(), &[1, 2, 3], &z.view()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let (r, _) = net.regressor_forward(&z.view()).unwrap();
        assert!(r.shape.iter().chain(r.camera.iter()).all(|v| *v == 0.0));
        assert_eq!(r.shape.ncols(), 10);
        assert_eq!(r.camera.ncols(), 3);
    }

    #[test]
    fn init_has_zero_head_and_is_deterministic() {
        let a = Networks::init(NetArch::default_for(144, 72), &mut stream(3, &[])).unwrap();
        let b = Networks::init(NetArch::default_for(144, 72), &mut stream(3, &[])).unwrap();
        assert_eq!(a.params, b.params);
        let mut rng = stream(4, &[]);
        let x = rand_mat(&mut rng, 2, 144);
        let z = rand_mat(&mut rng, 2, 72);
        let (out, _) = a.denoiser_forward(&x.view(), &[5, 9], &z.view()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_finite_on_bounded_inputs() {
        let mut rng = stream(5, &[]);
        let mut net = Networks::init_dense(small_arch(), &mut rng).unwrap();
        for v in &mut net.params.data {
            *v = (*v * 200.0).clamp(-10.0, 10.0);
        }
        let x = rand_mat(&mut rng, 4, 6).mapv(|v| (v * 10.0).clamp(-10.0, 10.0));
        let z = rand_mat(&mut rng, 4, 5).mapv(|v| (v * 10.0).clamp(-10.0, 10.0));
        let (a, _) = net.denoiser_forward(&x.view(), &[1, 50, 100, 1000], &z.view()).unwrap();
        let (b, _) = net.denoiser_forward(&x.view(), &[1, 50, 100, 1000], &z.view()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let net = Networks::zeros(small_arch()).unwrap();
        let x = Array2::zeros((2, 5));
        let z = Array2::zeros((2, 5));
        assert!(matches!(
            net.denoiser_forward(&x.view(), &[1, 1], &z.view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            net.regressor_forward(&Array2::zeros((1, 4)).view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Networks::from_params(small_arch(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut rng = stream(6, &[]);
        let net = Networks::init_dense(small_arch(), &mut rng).unwrap();
        let x = rand_mat(&mut rng, 1, 6);
        let z = rand_mat(&mut rng, 1, 5);
        let w = rand_mat(&mut rng, 1, 6);
        let f = |x: &Array2<f64>| {
            let (o, _) = net.denoiser_forward(&x.view(), &[7], &z.view()).unwrap();
            (&o * &w).sum()
        };
        let (_, cache) = net.denoiser_forward(&x.view(), &[7], &z.view()).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let dx = net.denoiser_backward(&cache, &w.view(), &mut g).unwrap();
        let h = 1e-5;
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += h;
            xm[[0, j]] -= h;
            let numeric = (f(&xp) - f(&xm)) / (2.0 * h);
            let rel = (numeric - dx[[0, j]]).abs() / numeric.abs().max(dx[[0, j]].abs()).max(1e-8);
            assert!(rel < 1e-4, "coord {j}: {numeric} vs {}", dx[[0, j]]);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = stream(7, &[]);
        let mut net = Networks::init_dense(small_arch(), &mut rng).unwrap();
        let x = rand_mat(&mut rng, 3, 6);
        let z = rand_mat(&mut rng, 3, 5);
        let wd = rand_mat(&mut rng, 3, 6);
        let ws = rand_mat(&mut rng, 3, 10);
        let wc = rand_mat(&mut rng, 3, 3);
        let ts = [1, 4, 9];
        let loss = |n: &Networks| {
            let (o, _) = n.denoiser_forward(&x.view(), &ts, &z.view()).unwrap();
            let (r, _) = n.regressor_forward(&z.view()).unwrap();
            (&o * &wd).sum() + (&r.shape * &ws).sum() + (&r.camera * &wc).sum()
        };
        let (_, dc) = net.denoiser_forward(&x.view(), &ts, &z.view()).unwrap();
        let (_, rc) = net.regressor_forward(&z.view()).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.denoiser_backward(&dc, &wd.view(), &mut g).unwrap();
        net.regressor_backward(&rc, &ws.view(), &wc.view(), &mut g).unwrap();
        let h = 1e-5;
        for i in 0..net.param_count() {
            let orig = net.params.data[i];
            net.params.data[i] = orig + h;
            let lp = loss(&net);
            net.params.data[i] = orig - h;
            let lm = loss(&net);
            net.params.data[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "{} [{i}]: {numeric} vs {}", net.params.owner(i).unwrap(), g[i]);
        }
    }
}
