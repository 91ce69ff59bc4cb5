//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod nifti_oracle;

use evcseg::evnet::ops::{self, ConvParams};
use evcseg::evnet::{self, EvNetConfig, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this in magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor5 {
    Tensor5::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values with magnitude at least `gap`, away from activation kinks.
pub fn random_tensor_off_zero(shape: [usize; 5], gap: f64, rng: &mut ChaCha8Rng) -> Tensor5 {
    Tensor5::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`, over the coordinates in `which` (all when `None`).
pub fn fd_check(
    x: &[f64],
    analytic: &[f64],
    which: Option<&[usize]>,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let all: Vec<usize> = (0..x.len()).collect();
    let idx = which.unwrap_or(&all);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in idx {
        let orig = probe[i];
        probe[i] = orig + FD_EPS;
        let up = f(&probe);
        probe[i] = orig - FD_EPS;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn with_data(t: &Tensor5, data: &[f64]) -> Tensor5 {
    Tensor5::new(t.shape(), data.to_vec()).unwrap()
}

fn conv_params(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize, stride: usize, pad: usize) -> ConvParams {
    let kernel = random_tensor([cout, cin, k, k, k], rng);
    let bias = (0..cout).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvParams::new(kernel, bias, stride, pad).unwrap()
}

/// Gradient check of a conv-like op w.r.t. input, kernel and bias.
fn check_conv_like(
    x: &Tensor5,
    p: &ConvParams,
    r: &Tensor5,
    fwd: impl Fn(&Tensor5, &ConvParams) -> Tensor5,
    bwd: impl Fn(&Tensor5, &ConvParams, &Tensor5) -> (Tensor5, ConvParams),
) -> f64 {
    let (gx, g) = bwd(x, p, r);
    let ex = fd_check(x.data(), gx.data(), None, |d| fwd(&with_data(x, d), p).dot(r));
    let ek = fd_check(p.kernel.data(), g.kernel.data(), None, |d| {
        let mut q = p.clone();
        q.kernel = with_data(&p.kernel, d);
        fwd(x, &q).dot(r)
    });
    let eb = fd_check(&p.bias, &g.bias, None, |d| {
        let mut q = p.clone();
        q.bias = d.to_vec();
        fwd(x, &q).dot(r)
    });
    ex.max(ek).max(eb)
}

pub fn grad_conv3d(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for &(k, stride, pad, n) in &[(3, 1, 1, 5), (3, 2, 0, 6), (2, 1, 0, 4), (1, 1, 0, 3)] {
        let x = random_tensor([2, 2, n, n - 1, n], &mut rng);
        let p = conv_params(&mut rng, 3, 2, k, stride, pad);
        let y = ops::conv3d_forward(&x, &p).unwrap();
        let r = random_tensor(y.shape(), &mut rng);
        worst = worst.max(check_conv_like(
            &x,
            &p,
            &r,
            |x, p| ops::conv3d_forward(x, p).unwrap(),
            |x, p, g| {
                let (gx, gp) = ops::conv3d_backward(x, p, g).unwrap();
                (gx, ConvParams { kernel: gp.kernel, bias: gp.bias, ..p.clone() })
            },
        ));
    }
    worst
}

pub fn grad_downconv(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = random_tensor([2, 2, 6, 4, 6], &mut rng);
    let p = conv_params(&mut rng, 3, 2, 2, 2, 0);
    let r = random_tensor([2, 3, 3, 2, 3], &mut rng);
    check_conv_like(
        &x,
        &p,
        &r,
        |x, p| ops::downconv(x, p).unwrap(),
        |x, p, g| {
            let (gx, gp) = ops::downconv_backward(x, p, g).unwrap();
            (gx, ConvParams { kernel: gp.kernel, bias: gp.bias, ..p.clone() })
        },
    )
}

pub fn grad_upconv(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = random_tensor([2, 3, 3, 2, 3], &mut rng);
    // transposed layout: (input side, output side, 2, 2, 2), bias on the output side
    let mut p = conv_params(&mut rng, 3, 2, 2, 2, 0);
    p.bias = vec![0.3, -0.2];
    let r = random_tensor([2, 2, 6, 4, 6], &mut rng);
    check_conv_like(
        &x,
        &p,
        &r,
        |x, p| ops::upconv(x, p).unwrap(),
        |x, p, g| {
            let (gx, gp) = ops::upconv_backward(x, p, g).unwrap();
            (gx, ConvParams { kernel: gp.kernel, bias: gp.bias, ..p.clone() })
        },
    )
}

pub fn grad_prelu(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = random_tensor_off_zero([2, 3, 4, 4, 4], 0.01, &mut rng);
    let slopes = vec![0.25, -0.1, 0.7];
    let r = random_tensor(x.shape(), &mut rng);
    let (gx, gs) = ops::prelu_backward(&x, &slopes, &r).unwrap();
    let ex = fd_check(x.data(), gx.data(), None, |d| ops::prelu(&with_data(&x, d), &slopes).unwrap().dot(&r));
    let es = fd_check(&slopes, &gs, None, |s| ops::prelu(&x, s).unwrap().dot(&r));
    ex.max(es)
}

pub fn grad_concat(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let a = random_tensor([2, 2, 3, 4, 5], &mut rng);
    let b = random_tensor([2, 1, 3, 4, 5], &mut rng);
    let r = random_tensor([2, 3, 3, 4, 5], &mut rng);
    let (ga, gb) = ops::split_channels(&r, 2).unwrap();
    let ea = fd_check(a.data(), ga.data(), None, |d| ops::concat_channels(&with_data(&a, d), &b).unwrap().dot(&r));
    let eb = fd_check(b.data(), gb.data(), None, |d| ops::concat_channels(&a, &with_data(&b, d)).unwrap().dot(&r));
    ea.max(eb)
}

pub fn grad_softmax(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = Tensor5::from_fn([2, 3, 3, 3, 3], |_| rng.random_range(-3.0..3.0));
    let r = random_tensor(x.shape(), &mut rng);
    let y = ops::softmax_channels(&x);
    let gx = ops::softmax_backward(&y, &r);
    fd_check(x.data(), gx.data(), None, |d| ops::softmax_channels(&with_data(&x, d)).dot(&r))
}

pub fn grad_soft_dice(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let shape = [3, 2, 4, 4, 4];
    let fg = Tensor5::from_fn([3, 1, 4, 4, 4], |_| rng.random_range(0.01..0.99));
    let pred = Tensor5::from_fn(shape, |i| {
        let p = fg.get([i[0], 0, i[2], i[3], i[4]]);
        if i[1] == 1 {
            p
        } else {
            1.0 - p
        }
    });
    let target = Tensor5::from_fn([3, 1, 4, 4, 4], |_| rng.random_bool(0.4) as u8 as f64);
    let g = evnet::soft_dice_grad(&pred, &target).unwrap();
    fd_check(pred.data(), g.data(), None, |d| {
        evnet::soft_dice_loss(&with_data(&pred, d), &target).unwrap().value
    })
}

/// Whole network plus soft-Dice loss, w.r.t. a sample of every parameter tensor.
/// With `linear_activations` every PReLU slope is 1, which removes the kinks
/// that central differences straddle on larger inputs.
pub fn grad_network(cfg: &EvNetConfig, seed: u64, linear_activations: bool) -> f64 {
    let mut rng = rng(seed);
    let cfg = &EvNetConfig {
        prelu_init: if linear_activations { 1.0 } else { cfg.prelu_init },
        ..cfg.clone()
    };
    let mut params = evnet::init_params(cfg).unwrap();
    // non-zero biases so every path is exercised
    for (_, v) in params.named_mut() {
        for x in v.iter_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.1..0.1);
            }
        }
    }
    let n = 4 * cfg.size_multiple();
    let input = random_tensor([2, 1, n, n, n], &mut rng);
    let target = Tensor5::from_fn([2, 1, n, n, n], |_| rng.random_bool(0.5) as u8 as f64);
    let loss = |p: &evnet::Params| {
        let y = evnet::evnet_forward(&input, p, cfg).unwrap();
        evnet::soft_dice_loss(&y, &target).unwrap().value
    };
    let cache = evnet::forward_train(&input, &params, cfg).unwrap();
    let gy = evnet::soft_dice_grad(cache.output(), &target).unwrap();
    let grads = evnet::backward(&cache, &params, cfg, &gy).unwrap();

    let mut worst = 0.0f64;
    let names: Vec<String> = params.named().into_iter().map(|(n, _, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let analytic = grads.named()[t].2.to_vec();
        let x = params.named()[t].2.to_vec();
        let sample: Vec<usize> = (0..6).map(|_| rng.random_range(0..x.len())).collect();
        let err = fd_check(&x, &analytic, Some(&sample), |d| {
            let mut q = params.clone();
            q.named_mut()[t].1.copy_from_slice(d);
            loss(&q)
        });
        assert!(err.is_finite(), "{name}");
        worst = worst.max(err);
    }
    worst
}

/// `(op name, worst relative error)` for every differentiable op.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("conv3d", grad_conv3d(1)),
        ("downconv", grad_downconv(2)),
        ("upconv", grad_upconv(3)),
        ("prelu", grad_prelu(4)),
        ("concat", grad_concat(5)),
        ("softmax", grad_softmax(6)),
        ("soft_dice", grad_soft_dice(7)),
    ]
}

/// ⟨down(x), y⟩ − ⟨x, up(y)⟩ for a shared kernel and zero bias.
pub fn adjoint_gap(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let kernel = random_tensor([3, 2, 2, 2, 2], &mut rng);
    let down = ConvParams::new(kernel.clone(), vec![0.0; 3], 2, 0).unwrap();
    let up = ConvParams::new(kernel, vec![0.0; 2], 2, 0).unwrap();
    let x = random_tensor([2, 2, 6, 4, 6], &mut rng);
    let y = random_tensor([2, 3, 3, 2, 3], &mut rng);
    let lhs = ops::downconv(&x, &down).unwrap().dot(&y);
    let rhs = x.dot(&ops::upconv(&y, &up).unwrap());
    (lhs - rhs).abs()
}

/// Max abs difference between multi-scale forward with zeroed raw weights
/// and the plain forward with the shared remaining weights.
pub fn reduction_gap(cfg: &EvNetConfig, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let cfg = EvNetConfig { seed, ..cfg.clone() };
    let mut p = evnet::init_params(&cfg).unwrap();
    for (_, v) in p.named_mut() {
        for x in v.iter_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.1..0.1);
            }
        }
    }
    p.zero_raw_input_weights(&cfg);
    let plain = p.without_raw_inputs(&cfg);
    let n = 2 * cfg.size_multiple();
    let x = random_tensor([2, 1, n, n, n], &mut rng);
    let a = evnet::evnet_forward(&x, &p, &cfg).unwrap();
    let b = evnet::evnet_forward(&x, &plain, &cfg.plain()).unwrap();
    a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

// ---- CRF instances -------------------------------------------------------

use evcseg::crf::{self, CrfBackend, CrfConfig, UpdateOrder};
use evcseg::{Affine, LabelMask, ProbMap, Volume};
use ndarray::Array3;

/// Random volume and foreground probability map of the given shape. Half of
/// the instances are structured (a noisy ball), half are unstructured noise.
pub fn crf_instance(shape: [usize; 3], rng: &mut ChaCha8Rng) -> (ProbMap, Volume) {
    let structured = rng.random_bool(0.5);
    let c = shape.map(|n| (n as f64 - 1.0) / 2.0 + rng.random_range(-1.0..1.0));
    let r = shape.iter().copied().min().unwrap() as f64 * rng.random_range(0.25..0.4);
    let img = Array3::from_shape_fn(shape, |(x, y, z)| {
        let d = ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2)).sqrt();
        let base = if structured && d <= r { 0.7 } else { 0.2 };
        base + rng.random_range(-0.1..0.1)
    });
    let fg = Array3::from_shape_fn(shape, |(x, y, z)| {
        if structured {
            let inside = img[[x, y, z]] > 0.45;
            let p: f64 = if inside { rng.random_range(0.5..0.95) } else { rng.random_range(0.05..0.5) };
            if rng.random_bool(0.1) { 1.0 - p } else { p }
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let vol = Volume::new(img.mapv(|v| v * 1000.0), Affine::identity()).unwrap();
    (ProbMap::from_foreground(&fg).unwrap(), vol)
}

pub fn random_shape(max: usize, rng: &mut ChaCha8Rng) -> [usize; 3] {
    [0; 3].map(|_| rng.random_range(max - 4..=max))
}

/// Random bandwidths, with weights chosen so each kernel's total mass over a
/// dense 1 mm grid is O(1). Larger masses saturate every marginal within a
/// sweep, which makes backend comparisons vacuous.
pub fn random_crf_config(rng: &mut ChaCha8Rng) -> CrfConfig {
    let theta_alpha: f64 = rng.random_range(1.5..4.0);
    let theta_gamma: f64 = rng.random_range(1.0..3.0);
    let theta_beta: f64 = rng.random_range(0.05..0.3);
    let gauss_mass = |t: f64| (2.0 * std::f64::consts::PI).powf(1.5) * t.powi(3);
    CrfConfig {
        w_appearance: rng.random_range(1.0..8.0) / gauss_mass(theta_alpha),
        w_smoothness: rng.random_range(0.5..4.0) / gauss_mass(theta_gamma),
        theta_alpha,
        theta_beta,
        theta_gamma,
        iterations: 5,
        ..CrfConfig::default()
    }
}

/// Fraction of voxels whose largest marginal is below 0.99.
pub fn unsaturated_fraction(q: &ProbMap) -> f64 {
    let d = q.data();
    let n = d.len() / d.shape()[0];
    let fg = d.index_axis(ndarray::Axis(0), 1);
    fg.iter().filter(|&&v| v > 0.01 && v < 0.99).count() as f64 / n as f64
}

/// Max-abs marginal difference between the filtered and brute backends, and
/// the unsaturated fraction of the brute result.
pub fn crf_backend_gap(seed: u64, default_weights: bool) -> (f64, f64) {
    let mut rng = rng(seed);
    let shape = random_shape(12, &mut rng);
    let (p, vol) = crf_instance(shape, &mut rng);
    let base = if default_weights {
        CrfConfig { iterations: 5, ..CrfConfig::default() }
    } else {
        random_crf_config(&mut rng)
    };
    let (_, a) = crf::refine(&p, &vol, &CrfConfig { backend: CrfBackend::Filtered, ..base.clone() }).unwrap();
    let (_, b) = crf::refine(&p, &vol, &CrfConfig { backend: CrfBackend::Brute, ..base }).unwrap();
    let gap = a.q.data().iter().zip(b.q.data().iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (gap, unsaturated_fraction(&b.q))
}

/// Largest increase of the exact free energy over sequential sweeps
/// (negative or zero when monotone).
pub fn crf_max_free_energy_increase(seed: u64, sweeps: usize) -> f64 {
    let mut rng = rng(seed);
    let shape = random_shape(8, &mut rng);
    let (p, vol) = crf_instance(shape, &mut rng);
    let cfg = CrfConfig {
        backend: CrfBackend::Brute,
        update_order: UpdateOrder::Sequential,
        ..random_crf_config(&mut rng)
    };
    let u = crf::unary_from_probmap(&p);
    let mut state = crf::MeanFieldState::from_unary(&u);
    let mut energies = vec![crf::variational_free_energy(&state.q, &u, &vol, &cfg).unwrap()];
    for _ in 0..sweeps {
        state = crf::mean_field_step(&state, &u, &vol, &cfg).unwrap();
        energies.push(*state.free_energy_trace.last().unwrap());
    }
    energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// Whether zero pairwise weights leave the unary argmax unchanged.
pub fn crf_zero_weights_keep_argmax(seed: u64) -> bool {
    let mut rng = rng(seed);
    let shape = random_shape(10, &mut rng);
    let (p, vol) = crf_instance(shape, &mut rng);
    let iterations = rng.random_range(1..8);
    [CrfBackend::Brute, CrfBackend::Filtered].iter().all(|&backend| {
        let cfg = CrfConfig { w_appearance: 0.0, w_smoothness: 0.0, iterations, backend, ..CrfConfig::default() };
        let (m, _) = crf::refine(&p, &vol, &cfg).unwrap();
        m == p.argmax_mask(*vol.affine())
    })
}

/// The 12³ sphere with 5% of unary voxels flipped: `(dice_unrefined, dice_refined)`.
pub fn crf_sphere_utility(seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let n = 12;
    let c = (n as f64 - 1.0) / 2.0;
    let truth = LabelMask::from_fn([n; 3], Affine::identity(), |p| {
        p.iter().map(|&v| (v as f64 - c).powi(2)).sum::<f64>() <= 16.0
    });
    let img = truth.data().mapv(|v| if v == 1 { 0.7 } else { 0.2 } + rng.random_range(-0.05..0.05));
    let fg = truth.data().mapv(|v| {
        let p = if v == 1 { 0.8 } else { 0.2 };
        if rng.random_bool(0.05) { 1.0 - p } else { p }
    });
    let p = ProbMap::from_foreground(&fg).unwrap();
    let vol = Volume::new(img, Affine::identity()).unwrap();
    let cfg = CrfConfig { backend: CrfBackend::Brute, iterations: 5, ..CrfConfig::default() };
    let (refined, _) = crf::refine(&p, &vol, &cfg).unwrap();
    let raw = p.argmax_mask(*vol.affine());
    (
        evcseg::metrics::dice(&truth, &raw).unwrap(),
        evcseg::metrics::dice(&truth, &refined).unwrap(),
    )
}
