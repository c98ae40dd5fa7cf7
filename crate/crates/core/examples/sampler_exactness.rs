//! MALA and HMC on a fixed correlated Gaussian, without annealing.
//!
//! cargo run --release --example sampler_exactness

use diffcomp::linalg::{self, Sym2, Vec2};
use diffcomp::rng;
use diffcomp::samplers::{hmc_pmr_step, mala_step};

fn report(label: &str, xs: &[Vec2], rate: f64) {
    let n = xs.len() as f64;
    let m = [xs.iter().map(|p| p[0]).sum::<f64>() / n, xs.iter().map(|p| p[1]).sum::<f64>() / n];
    let c = |a: usize, b: usize| xs.iter().map(|p| (p[a] - m[a]) * (p[b] - m[b])).sum::<f64>() / n;
    println!(
        "{label:5} acceptance {rate:.3}  mean [{:.3}, {:.3}]  cov [{:.3}, {:.3}, {:.3}]",
        m[0],
        m[1],
        c(0, 0),
        c(0, 1),
        c(1, 1)
    );
}

fn main() {
    let mean = [0.3, -0.2];
    let cov = Sym2::new(1.0, 0.6, 0.8);
    let prec = cov.inverse();
    let target = |x: Vec2| {
        let d = linalg::sub(x, mean);
        (-0.5 * prec.quad_form(d), linalg::scale(prec.mul_vec(d), -1.0))
    };
    let (kept, thin) = (10_000, 10);
    println!("target mean [0.300, -0.200]  cov [1.000, 0.600, 0.800]");

    let mut r = rng::stream(0, 0);
    let (mut x, mut acc, mut out) = ([0.0, 0.0], 0usize, Vec::new());
    for i in 0..kept * thin {
        let (nx, a) = mala_step(target, x, 0.8, &mut r);
        x = nx;
        acc += a as usize;
        if i % thin == 0 {
            out.push(x);
        }
    }
    report("MALA", &out, acc as f64 / (kept * thin) as f64);

    let mut r = rng::stream(0, 1);
    let (mut x, mut v, mut acc, mut out) = ([0.0, 0.0], [0.0, 0.0], 0usize, Vec::new());
    for i in 0..kept * thin {
        let (nx, nv, a) = hmc_pmr_step(target, x, v, 0.9, 0.3, 3, 1.0, &mut r);
        (x, v) = (nx, nv);
        acc += a as usize;
        if i % thin == 0 {
            out.push(x);
        }
    }
    report("HMC", &out, acc as f64 / (kept * thin) as f64);
}
