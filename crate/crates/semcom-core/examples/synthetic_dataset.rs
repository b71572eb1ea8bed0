use semcom_core::data::synthetic;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = std::path::PathBuf::from(&args[1]);
    let train: usize = args[2].parse().unwrap();
    let test: usize = args[3].parse().unwrap();
    synthetic::write_dataset(&dir, train, test, 42).unwrap();
    println!("wrote {train}+{test} records to {}", dir.display());
}
