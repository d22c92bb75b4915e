fn main() {
    println!("kg2text");
}
