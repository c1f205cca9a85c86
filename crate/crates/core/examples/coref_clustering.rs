//! Clusters person-name mentions with average-linkage HAC over a classic
//! similarity, tunes the threshold on one document and scores another.

use stance::classic::ClassicMetric;
use stance::coref::{b_cubed, default_grid, hac_average, hac_dendrogram, tune_threshold, Clustering, ScoreMatrix};

fn doc(items: &[(&str, usize)]) -> (Vec<String>, Clustering) {
    let texts = items.iter().map(|(t, _)| t.to_string()).collect();
    let gold: Vec<usize> = items.iter().map(|(_, e)| *e).collect();
    (texts, Clustering::from_labels(&gold))
}

fn main() -> stance::Result<()> {
    let (dev, dev_gold) = doc(&[
        ("Barack Obama", 0),
        ("Obama, Barack", 0),
        ("B. Obama", 0),
        ("Michelle Obama", 1),
        ("Obama, Michelle", 1),
        ("Joe Biden", 2),
        ("Biden, Joe", 2),
        ("Joseph Biden", 2),
    ]);
    let (test, test_gold) = doc(&[
        ("Angela Merkel", 0),
        ("Merkel, Angela", 0),
        ("A. Merkel", 0),
        ("Olaf Scholz", 1),
        ("Scholz, Olaf", 1),
        ("Angela Davis", 2),
        ("Davis, Angela", 2),
    ]);
    for metric in ClassicMetric::ALL {
        let dev_scores = ScoreMatrix::from_scorer(&dev, &metric)?;
        let (tau, dev_b3) = tune_threshold(&dev_scores, &dev_gold, &default_grid(&dev_scores))?;
        let scores = ScoreMatrix::from_scorer(&test, &metric)?;
        let pred = hac_average(&scores, tau);
        let b = b_cubed(&pred, &test_gold)?;
        println!(
            "{metric}: threshold {tau:.4} (dev F1 {:.4})  test P {:.4} R {:.4} F1 {:.4}",
            dev_b3.f1, b.precision, b.recall, b.f1
        );
        for c in pred.clusters() {
            let names: Vec<&str> = c.iter().map(|&i| test[i].as_str()).collect();
            println!("    {names:?}");
        }
    }

    let scores = ScoreMatrix::from_scorer(&test, &ClassicMetric::Lcs)?;
    println!("lcs dendrogram");
    for m in &hac_dendrogram(&scores).merges {
        println!("  merge {:>2} <- {:>2} at {:.4}", m.a, m.b, m.linkage);
    }
    Ok(())
}
