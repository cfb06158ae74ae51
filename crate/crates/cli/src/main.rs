use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = annolab_cli::Cli::parse();
    annolab_cli::init_tracing(cli.log_level.as_deref());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let code = runtime.block_on(annolab_cli::run(cli));
    std::process::ExitCode::from(code)
}
