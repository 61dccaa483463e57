fn main() {
    std::process::exit(dynunet_cli::main_entry());
}
