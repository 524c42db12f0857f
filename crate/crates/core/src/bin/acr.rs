fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ACR_LOG", "info")).init();
    let code = acr::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
