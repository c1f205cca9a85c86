//! Entropic optimal transport between two small character sequences.
//!
//! Builds a similarity matrix from one-hot characters, turns it into a cost,
//! and shows how the plan sharpens towards an assignment as λ grows.

use stance::diffmath::Tensor;
use stance::encoder::SimilarityMatrix;
use stance::otalign::{cost_from_similarity, reweight, sinkhorn, uniform_marginals, SinkhornConfig};

fn show(name: &str, t: &Tensor<f32>) {
    println!("{name}");
    for i in 0..t.rows() {
        let row: Vec<String> = t.row_vec(i).iter().map(|x| format!("{x:6.3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> stance::Result<()> {
    let (a, b): (Vec<char>, Vec<char>) = ("stein".chars().collect(), "steyn".chars().collect());
    let vals: Vec<f32> = a.iter().flat_map(|x| b.iter().map(move |y| if x == y { 1.0 } else { 0.0 })).collect();
    let s = SimilarityMatrix { values: Tensor::new(vec![a.len(), b.len()], vals)?, valid: (a.len(), b.len()) };
    let cost = cost_from_similarity(&s)?;
    let marg = uniform_marginals(a.len(), b.len())?;
    for lambda in [1.0, 10.0, 50.0] {
        let cfg = SinkhornConfig { lambda, max_iters: 200, ..Default::default() };
        let (plan, stats) = sinkhorn(&cost, &marg, &cfg)?;
        println!(
            "λ = {lambda}: {} iterations, log domain {}, transport cost {:.4}",
            stats.iterations,
            stats.log_domain,
            plan.cost(&cost)
        );
        show("plan", &plan.values);
        if lambda == 50.0 {
            show("S∘P", &reweight(&s, &plan)?.values);
        }
    }
    Ok(())
}
