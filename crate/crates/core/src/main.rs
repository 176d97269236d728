fn main() {
    std::process::exit(interaction_gn::cli::run(std::env::args_os()));
}
