//! JSON serialization with every float written at 17 significant digits so
//! parse(serialize(x)) round-trips exactly.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;

struct SigDigits17;

impl Formatter for SigDigits17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_string(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits17);
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    String::from_utf8(out).expect("JSON is UTF-8")
}
