//! Cosine schedule, transition matrices and the one-step posterior for both priors.
//!
//! ```text
//! cargo run --example noise_kernels -- 500 4
//! ```

use retrodiff::noise::{NoiseSchedule, PriorKind, TransitionKernel, DEFAULT_OFFSET};

fn print_matrix(label: &str, m: &[f64], dim: usize) {
    println!("{label}");
    for row in m.chunks(dim) {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.4}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let dim: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let schedule = NoiseSchedule::cosine(steps, DEFAULT_OFFSET)?;

    println!("t\talpha_bar\talpha");
    for t in [1, steps / 4, steps / 2, 3 * steps / 4, steps] {
        println!("{t}\t{:.6}\t{:.6}", schedule.alpha_bar(t), schedule.alpha(t));
    }

    for prior in [PriorKind::Absorbing, PriorKind::Uniform] {
        let kernel = TransitionKernel::new(schedule.clone(), dim, prior)?;
        println!("\n{} prior, limit {:?}", prior.name(), kernel.limit());
        print_matrix(&format!("Q_{}", steps / 2), &kernel.step_matrix(steps / 2), dim);
        print_matrix(&format!("Q̄_{}", steps / 2), &kernel.cumulative_matrix(steps / 2), dim);
        let t = steps / 2;
        let x0 = dim - 1;
        for xt in [0, x0] {
            match kernel.posterior(xt, x0, t) {
                Ok(p) => println!("q(x_{} | x_{t} = {xt}, x_0 = {x0}) = {:?}", t - 1, p.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()),
                Err(e) => println!("x_{t} = {xt}, x_0 = {x0}: {e}"),
            }
        }
    }
    Ok(())
}
