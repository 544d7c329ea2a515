use clap::Parser;

fn main() -> anyhow::Result<()> {
    let cli = join_ids::cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    join_ids::cli::main_with(cli, &mut stdout)
}
