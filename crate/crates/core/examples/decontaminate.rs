//! Removes training items that overlap an evaluation corpus by id, by exact
//! canonical text, or by character n-gram similarity.

use cppo::corpus::{decontaminate, CorpusItem, DeconConfig};

fn item(id: &str, text: &str) -> CorpusItem {
    CorpusItem { id: id.into(), source: "demo".into(), text: text.into() }
}

fn main() -> anyhow::Result<()> {
    let eval = vec![
        item("eval:1", "Count the pairs (i, j) with a[i] + a[j] = t."),
        item("eval:2", "Find the length of the shortest path from the top left cell to the bottom right cell of a grid with walls."),
    ];
    let train = vec![
        item("train:a", "<p>Count the pairs (i, j) with a[i] + a[j] = t.</p>"),
        item("train:b", "Find the length of the shortest path from the top left cell to the bottom right cell of a grid with some walls."),
        item("train:c", "Sort the array and print the median."),
        item("eval:2", "An unrelated statement that reuses an eval id."),
    ];
    let (kept, report) = decontaminate(&train, &eval, &DeconConfig::default())?;
    println!("kept: {:?}", kept.iter().map(|i| i.id.as_str()).collect::<Vec<_>>());
    println!("id matches:    {:?}", report.id_matches);
    println!("exact matches: {:?}", report.exact_matches);
    for m in &report.fuzzy_matches {
        println!("fuzzy match:   {} ~ {} ({:.3})", m.train_id, m.eval_id, m.similarity);
    }
    Ok(())
}
