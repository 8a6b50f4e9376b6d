fn main() {
    println!("fgp");
}
