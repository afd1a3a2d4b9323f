fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MVGDP_LOG")).init();
    std::process::exit(mvgdp::cli::run(std::env::args_os()));
}
