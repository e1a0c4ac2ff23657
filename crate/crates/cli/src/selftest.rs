//! Built-in checks: gradients, adjointness, transform values and the t-test
//! fixture. Prints one PASS/FAIL line per check.

use rand::Rng;

use pdn_core::eval_stats::paired_t_test;
use pdn_core::model::{LayerSpec, Network, NetworkConfig, NetworkProbe};
use pdn_core::nn::{gradient_check, ConvLayer, ConvProbe, GradCheckReport, MseProbe, ReluProbe, Tensor4, FD_STEP};
use pdn_core::noise_vst::{anscombe_forward, anscombe_inverse_naive, anscombe_inverse_unbiased};
use pdn_core::rng::{keyed_stream, Domain};

use crate::commands::CliError;

const GRAD_TOL: f64 = 1e-6;
const SEED: u64 = 0x5e1f;

fn random(dims: [usize; 4], stream: u64, lo: f64, hi: f64) -> Tensor4<f64> {
    let mut rng = keyed_stream(SEED, Domain::Init, stream);
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn layer(cin: usize, cout: usize, transposed: bool, stream: u64) -> ConvLayer<f64> {
    let mut l = ConvLayer::new(cin, cout, 5, 2, transposed).unwrap();
    l.init_glorot_uniform(&mut keyed_stream(SEED, Domain::Init, stream));
    let mut rng = keyed_stream(SEED, Domain::Init, stream + 1000);
    l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
    l
}

fn grad_line(name: &str, r: pdn_core::Result<GradCheckReport>) -> (bool, String) {
    match r {
        Ok(r) => (
            r.passes(GRAD_TOL),
            format!("{name}: max rel error {:.2e} over {} slots ({} at kinks skipped)", r.max_rel_error, r.checked, r.skipped),
        ),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn checks(full: bool) -> Vec<(bool, String)> {
    let mut out = Vec::new();

    let anscombe = [
        ("forward(0)", anscombe_forward(0.0), 1.224_744_871_391_589),
        ("forward(1)", anscombe_forward(1.0), 2.345_207_879_911_715),
        ("naive_inverse(2)", anscombe_inverse_naive(2.0), 0.625),
        ("unbiased_inverse(2)", anscombe_inverse_unbiased(2.0), 0.780_026_302_0),
        ("unbiased_inverse(10)", anscombe_inverse_unbiased(10.0), 24.892_634_087_3),
    ];
    for (name, got, want) in anscombe {
        let ok = got.as_ref().is_ok_and(|g| (g - want).abs() < 1e-6);
        out.push((ok, format!("anscombe {name} = {got:?} (expected {want})")));
    }

    let gains = [
        0.49, 0.54, 0.96, 0.40, 0.33, 0.93, -0.14, 0.58, 0.30, 0.32, 0.34, -0.82, 0.32, -0.16, 0.53, 0.30, 0.68,
        0.27, 0.21, 1.05, 0.50,
    ];
    match paired_t_test(&gains) {
        Ok(t) => out.push((
            (0.375..=0.381).contains(&t.mean) && (4.19..=4.29).contains(&t.t) && (0.0001..=0.0007).contains(&t.p_two_tailed),
            format!("t-test fixture: mean {:.4}, t {:.4}, p {:.4}", t.mean, t.t, t.p_two_tailed),
        )),
        Err(e) => out.push((false, format!("t-test fixture: {e}"))),
    }

    for (name, transposed) in [("conv2d", false), ("deconv2d", true)] {
        let (hw_in, hw_out) = if transposed { (4, 8) } else { (8, 4) };
        let mut probe = ConvProbe {
            layer: layer(2, 3, transposed, transposed as u64),
            input: random([1, 2, hw_in, hw_in], 10, -1.0, 1.0),
            target: random([1, 3, hw_out, hw_out], 11, -1.0, 1.0),
        };
        out.push(grad_line(&format!("gradient {name}"), gradient_check(&mut probe, FD_STEP)));
    }
    let input = random([1, 2, 6, 6], 12, -1.0, 1.0).map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    let mut relu = ReluProbe {
        input,
        target: random([1, 2, 6, 6], 13, -1.0, 1.0),
    };
    out.push(grad_line("gradient relu", gradient_check(&mut relu, FD_STEP)));
    let mut mse = MseProbe {
        prediction: random([2, 1, 5, 5], 14, -1.0, 1.0),
        target: random([2, 1, 5, 5], 15, -1.0, 1.0),
    };
    out.push(grad_line("gradient mse", gradient_check(&mut mse, FD_STEP)));

    let (name, config) = if full {
        ("gradient default network 16x16", NetworkConfig {
            patch_size: 16,
            seed: SEED,
            ..Default::default()
        })
    } else {
        ("gradient two-branch network 8x8", NetworkConfig {
            patch_size: 8,
            branches: vec![vec![LayerSpec::new(4, 3, 2)], vec![LayerSpec::new(4, 3, 2), LayerSpec::new(2, 3, 2)]],
            seed: SEED,
            ..Default::default()
        })
    };
    let p = config.patch_size;
    let probe = Network::<f64>::build(config)
        .and_then(|net| NetworkProbe::near_output(net, random([1, 1, p, p], 16, 0.05, 1.0), 0.05, SEED));
    out.push(grad_line(name, probe.and_then(|mut probe| gradient_check(&mut probe, FD_STEP))));

    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let conv = layer(3, 5, false, 100 + trial);
        let x = random([1, 3, 8, 8], 200 + trial, -1.0, 1.0);
        let y = random([1, 5, 4, 4], 300 + trial, -1.0, 1.0);
        let mut conv0 = conv.clone();
        conv0.bias.fill(0.0);
        let lhs = conv0.forward(&x).and_then(|c| c.dot(&y));
        let rhs = conv.adjoint().forward(&y).and_then(|d| x.dot(&d));
        match (lhs, rhs) {
            (Ok(l), Ok(r)) => worst = worst.max((l - r).abs() / (x.norm() * y.norm())),
            _ => worst = f64::INFINITY,
        }
    }
    out.push((worst < 1e-5, format!("adjoint identity: worst normalized gap {worst:.2e} over 20 trials")));
    out
}

pub fn run(full: bool) -> Result<(), CliError> {
    let results = checks(full);
    let failed = results.iter().filter(|(ok, _)| !ok).count();
    for (ok, line) in &results {
        println!("{} {line}", if *ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{failed} of {} self-test checks failed", results.len())))
    }
}
