//! Loads an interaction file (or synthesizes the planted dataset), splits it
//! 7:1:2 per user and writes the id maps and split manifest.
//!
//! `cargo run --release --example prepare_dataset -- [path [edge-list|adjacency-list]] [out_dir]`

use std::path::PathBuf;

use lth_rec::data::density;
use lth_rec::{build_graph, load_interactions, split_dataset, InputFormat, PlantedConfig, SplitRatio};

fn main() -> lth_rec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (data, out) = match args.first() {
        Some(path) => {
            let format = match args.get(1).map(String::as_str) {
                Some("adjacency-list") => InputFormat::AdjacencyList,
                _ => InputFormat::EdgeList,
            };
            let out = args.get(2).map_or_else(|| PathBuf::from("prepared"), PathBuf::from);
            (load_interactions(path.as_ref(), format)?, out)
        }
        None => (PlantedConfig::default().generate()?, std::env::temp_dir().join("lth-rec-prepared")),
    };
    std::fs::create_dir_all(&out)?;

    let split = split_dataset(&data, SplitRatio::default(), 42);
    data.write_id_maps(&out.join("users.tsv"), &out.join("items.tsv"))?;
    split.write_manifest(&out.join("split.tsv"))?;
    let graph = build_graph(&split)?;

    println!("users {}  items {}  interactions {}", data.num_users(), data.num_items(), data.edges.len());
    println!("density {:.6}", density(data.num_users(), data.num_items(), data.edges.len()));
    println!(
        "train {}  validation {}  test {}  (train-only users {})",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        split.train_only_users.len()
    );
    println!(
        "adjacency nnz {} (= 2 × train edges), max degree {}",
        graph.adjacency().nnz(),
        graph.degrees().iter().max().unwrap_or(&0)
    );
    println!("wrote {}", out.display());
    Ok(())
}
