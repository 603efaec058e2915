fn main() { println!("geoxray"); }
