//! Channels and leaf noise: stationary distributions, the second
//! eigenvalue that controls reconstruction, and the three noise
//! regimes applied on top of a base channel.

use treecast::channel::{Channel, NoiseChannel};

fn main() {
    let bsc = Channel::bsc(0.3).unwrap();
    println!("bsc(0.3) rows:");
    print_matrix(bsc.matrix());
    println!("stationary = {:?}", bsc.stationary().unwrap().as_slice());
    println!("lambda2    = {}", bsc.second_eigenvalue());
    println!("ergodic    = {}", bsc.is_ergodic());

    // powers flatten toward the stationary profile
    for k in [1u32, 2, 4, 8] {
        let p = bsc.matrix_power(k);
        println!("M^{k}[0][0] = {:.10}", p[(0, 0)]);
    }

    let q3 = Channel::qsym(3, 0.2).unwrap();
    println!("\nqsym(3, 0.2) lambda2 = {}", q3.second_eigenvalue());

    // extra broadcast steps before observing
    let steps = NoiseChannel::extra_steps(&bsc, 2);
    println!("\nextra_steps(2) rows:");
    print_matrix(steps.matrix());

    // replace the symbol by a fresh draw from nu with probability eps
    let mix = NoiseChannel::mix(2, &[0.5, 0.5], 0.25).unwrap();
    println!("mix(uniform, 0.25) rows:");
    print_matrix(mix.matrix());

    // append an erasure symbol, alphabet grows by one
    let era = NoiseChannel::erasure(2, 0.25).unwrap();
    println!("erasure(0.25) rows ({} output symbols):", era.b());
    print_matrix(era.matrix());
}

fn print_matrix(m: &nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.4}", m[(i, j)])).collect();
        println!("  [{}]", row.join(", "));
    }
}
