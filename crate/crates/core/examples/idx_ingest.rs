//! Write a tiny IDX image/label pair, load it as a dataset scaled to a norm
//! bound, and save it in the CSV dataset format.
//!
//! cargo run --example idx_ingest

use specbound::io::{load_idx, save_dataset};

fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut bytes = magic.to_be_bytes().to_vec();
    for d in dims {
        bytes.extend(d.to_be_bytes());
    }
    bytes.extend(payload);
    bytes
}

fn main() -> specbound::Result<()> {
    let dir = std::env::temp_dir().join("specbound-idx-example");
    std::fs::create_dir_all(&dir).map_err(|e| specbound::Error::Io { path: dir.clone(), source: e })?;
    let pixels: Vec<u8> = (0..5 * 4 * 4).map(|i| (i * 37 % 256) as u8).collect();
    let images = dir.join("images.idx");
    let labels = dir.join("labels.idx");
    let write = |path: &std::path::Path, bytes: Vec<u8>| {
        std::fs::write(path, bytes).map_err(|e| specbound::Error::Io { path: path.to_path_buf(), source: e })
    };
    write(&images, idx(0x0803, &[5, 4, 4], &pixels))?;
    write(&labels, idx(0x0801, &[5], &[0, 1, 2, 1, 0]))?;

    let data = load_idx(&images, &labels, Some(4), 2.0)?;
    println!("{} samples, n = {}, k = {}, B = {}", data.len(), data.n(), data.k(), data.b());
    let out = dir.join("data.csv");
    save_dataset(&data, &out)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
