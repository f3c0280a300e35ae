fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    std::process::exit(spatial_ridge::cli::run(std::env::args_os()));
}
