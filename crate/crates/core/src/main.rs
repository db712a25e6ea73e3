fn main() {
    std::process::exit(rsclt::cli::dispatch(std::env::args()));
}
