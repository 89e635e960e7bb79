//! Write a dataset as EMB and CSV, read it back, and show how corrupt files
//! are reported.

use spurbench::dataspec;
use spurbench::embio;
use spurbench::SpuriosityConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("spurbench-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let data = dataspec::generate(&SpuriosityConfig { n_per_class: 100, ..Default::default() }, 1)?;

    let emb = dir.join("toy.emb");
    embio::write_emb(&data, &emb)?;
    let back = embio::read_emb(&emb)?;
    println!("EMB: {} bytes, n = {}, d = {}, groups = {}", std::fs::metadata(&emb)?.len(), back.len(), back.samples().dim(), back.groups().is_some());

    let csv = dir.join("toy.csv");
    embio::write_csv(&data, &csv)?;
    let back = embio::read_csv(&csv, true)?;
    let header = std::fs::read_to_string(&csv)?.lines().next().unwrap_or_default().to_string();
    println!("CSV: header {header:?}, n = {}", back.len());

    let mut bytes = embio::encode_emb(&data)?;
    bytes.truncate(bytes.len() - 3);
    println!("truncated EMB -> {}", embio::decode_emb(&bytes).unwrap_err());
    bytes[..4].copy_from_slice(b"NOPE");
    println!("bad magic     -> {}", embio::decode_emb(&bytes).unwrap_err());

    std::fs::write(dir.join("ragged.csv"), "f0,f1,label,group\n0.1,0.2,0,majority\n0.3,1,minority\n")?;
    println!("ragged CSV    -> {}", embio::read_csv(dir.join("ragged.csv"), true).unwrap_err());

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
