fn main() {
    tcu::cli::main();
}
