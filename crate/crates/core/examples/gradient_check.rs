//! Compare backpropagated gradients against central finite differences for
//! the three network roles used in the pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltreg::grid::Feeder;
use voltreg::nn::{finite_difference_check, Activation, Mlp};

fn main() -> voltreg::Result<()> {
    let f = Feeder::bundled();
    let (nf, m) = (f.n_free(), f.n_devices());
    let roles = [
        ("surrogate", vec![2 * nf, 32, 16, nf], Activation::Identity),
        ("actor", vec![3 * nf, 32, 16, m], Activation::Tanh),
        ("critic", vec![3 * nf + m, 32, 16, 1], Activation::Identity),
    ];
    for (name, sizes, out) in roles {
        let mut worst = (0.0_f64, 0.0_f64);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&sizes, Activation::Tanh, out, &mut rng);
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = finite_difference_check(&net, &x, &w, 1e-5, 1e-7)?;
            worst = (worst.0.max(c.max_rel_param), worst.1.max(c.max_rel_input));
        }
        println!("{name:<9} {sizes:?}: worst relative error params {:.1e}, inputs {:.1e}", worst.0, worst.1);
    }
    Ok(())
}
