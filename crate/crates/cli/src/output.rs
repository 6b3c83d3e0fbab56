//! One JSON object per line, or an aligned key/value listing with `--pretty`.

use serde_json::Value;

pub fn emit(value: &Value, pretty: bool) {
    if !pretty {
        println!("{value}");
        return;
    }
    let Value::Object(map) = value else {
        println!("{value:#}");
        return;
    };
    let width = map.keys().map(String::len).max().unwrap_or(0);
    for (k, v) in map {
        let shown = match v {
            Value::String(s) => s.clone(),
            Value::Null => "-".into(),
            other => other.to_string(),
        };
        println!("{k:<width$}  {shown}");
    }
}
