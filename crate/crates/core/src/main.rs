fn main() {
    std::process::exit(consensus_cards::cli::main());
}
