fn main() {
    eprintln!("cantata: not yet wired");
    std::process::exit(2);
}
