fn main() {
    eprintln!("riesz-fdi: command line front end not wired up yet");
    std::process::exit(2);
}
