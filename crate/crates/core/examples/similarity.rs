//! SoftTFIDF scores for a few insight pairs, the measure used to drop
//! near-duplicate knowledge entries.
//!
//! cargo run -p trt --example similarity

use trt::similarity::{jaro_winkler, SoftTfIdf};

fn main() {
    let insights = [
        "Do not assume the base case holds without checking n = 0",
        "Don't assume the base case holds without checking n=0",
        "Avoid reducing modulo 7 before applying the parity argument",
        "Check symmetric configurations before dividing by the group size",
    ];
    let model = SoftTfIdf::new(insights);
    for (i, a) in insights.iter().enumerate() {
        for b in &insights[i + 1..] {
            println!("{:.3}  {a:?}\n       {b:?}", model.similarity(a, b));
        }
    }
    println!(
        "\njaro-winkler(colour, color) = {:.4}",
        jaro_winkler("colour", "color")
    );
}
