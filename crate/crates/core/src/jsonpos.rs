//! Maps a JSON path to the source line where its value starts, so loaders can
//! point at the offending line of a file that parsed fine but failed validation.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seg<'a> {
    Key(&'a str),
    Index(usize),
}

struct Frame {
    is_obj: bool,
    key: Option<String>,
    idx: usize,
    expect_key: bool,
}

fn matches(stack: &[Frame], target: &[Seg]) -> bool {
    stack.len() == target.len()
        && stack.iter().zip(target).all(|(f, t)| match (f.is_obj, t) {
            (true, Seg::Key(k)) => f.key.as_deref() == Some(*k),
            (false, Seg::Index(i)) => f.idx == *i,
            _ => false,
        })
}

/// 1-based line of the value at `target`, if present.
pub fn line_of(text: &str, target: &[Seg]) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut stack: Vec<Frame> = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => line += 1,
            b' ' | b'\t' | b'\r' | b':' => {}
            b',' => {
                if let Some(top) = stack.last_mut() {
                    if top.is_obj {
                        top.expect_key = true;
                    } else {
                        top.idx += 1;
                    }
                }
            }
            b'}' | b']' => {
                stack.pop();
            }
            b'"' => {
                let start = i + 1;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                let is_key = stack.last().is_some_and(|f| f.is_obj && f.expect_key);
                if is_key {
                    let top = stack.last_mut().expect("checked");
                    top.key = Some(text[start..i.min(bytes.len())].to_string());
                    top.expect_key = false;
                } else if matches(&stack, target) {
                    return Some(line);
                }
            }
            b'{' | b'[' => {
                if matches(&stack, target) {
                    return Some(line);
                }
                stack.push(Frame {
                    is_obj: c == b'{',
                    key: None,
                    idx: 0,
                    expect_key: c == b'{',
                });
            }
            _ => {
                if matches(&stack, target) {
                    return Some(line);
                }
                while i + 1 < bytes.len() && !b",}] \t\r\n".contains(&bytes[i + 1]) {
                    i += 1;
                }
            }
        }
        i += 1;
    }
    None
}
