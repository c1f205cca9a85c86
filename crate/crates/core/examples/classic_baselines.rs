//! Prints the four classic similarity baselines for a few name pairs.

use stance::classic::{levenshtein, soundex_tokens, ClassicMetric};

fn main() {
    let pairs = [
        ("kitten", "sitting"),
        ("Paul Lieberstein", "Lieberstein, Paul"),
        ("Martha", "Marhta"),
        ("Robert Smith", "Rupert Smyth"),
        ("Dwayne Johnson", "The Rock"),
    ];
    print!("{:<34}", "pair");
    for m in ClassicMetric::ALL {
        print!("{:>8}", m.name());
    }
    println!();
    for (a, b) in pairs {
        print!("{:<34}", format!("{a} / {b}"));
        for m in ClassicMetric::ALL {
            print!("{:>8.4}", m.similarity(a, b).value);
        }
        println!();
    }
    println!();
    println!("levenshtein(kitten, sitting) = {}", levenshtein("kitten", "sitting"));
    println!("soundex codes: {} | {}", soundex_tokens("Robert Smith"), soundex_tokens("Rupert Smyth"));
}
