fn main() {
    std::process::exit(effnoise::cli::dispatch(std::env::args_os()));
}
