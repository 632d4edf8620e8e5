//! Lists the vocabulary, stage configuration and tensors stored in a checkpoint.
//!
//! ```text
//! cargo run --example inspect_checkpoint -- toy20.rdck
//! ```

use retrodiff::denoiser::read_checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "toy20.rdck".to_string());
    let bytes = std::fs::read(&path)?;
    let ck = read_checkpoint(&bytes)?;
    println!("{path}: {} bytes, crc32 {:08x}", bytes.len(), crc32fast::hash(&bytes));
    println!("vocabulary {}", ck.vocab.symbols().join(","));
    for (k, v) in ck.config.to_pairs() {
        println!("  {k} = {v}");
    }
    for m in &ck.models {
        let arch = m.params.arch();
        println!(
            "model '{}': {} layers, widths {}/{}/{}, {} heads, {} parameters, {} optimizer steps",
            m.prefix,
            arch.n_layer,
            arch.node_width,
            arch.edge_width,
            arch.global_width,
            arch.heads,
            m.params.parameter_count(),
            m.adam.step
        );
        for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
            let rms = (t.data.iter().map(|x| x * x).sum::<f64>() / t.len().max(1) as f64).sqrt();
            println!("    {name:<28} {:>4}x{:<4} rms {rms:.4}", t.rows, t.cols);
        }
    }
    Ok(())
}
