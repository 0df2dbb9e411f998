fn main() {
    let dir = std::env::args().nth(1).expect("target directory");
    let cfg = hhdemand::fixtures::write_toy_fixture(std::path::Path::new(&dir), 100).unwrap();
    println!("{}", cfg.display());
}
