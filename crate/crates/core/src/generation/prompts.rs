//! Prompt templates with positional `{}` slots; `{{` and `}}` are literal braces.

use std::path::Path;

use crate::generation::GenerationError;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub slot_count: usize,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, GenerationError> {
        let name = name.into();
        let body = body.into();
        let slot_count = count_slots(&body)
            .map_err(|at| GenerationError::Template(format!("{name}: stray brace at byte {at}")))?;
        Ok(PromptTemplate {
            name,
            body,
            slot_count,
        })
    }

    /// Fills the slots left to right; the argument count must match exactly.
    pub fn fill(&self, args: &[&str]) -> Result<String, GenerationError> {
        if args.len() != self.slot_count {
            return Err(GenerationError::Template(format!(
                "{}: expected {} arguments, got {}",
                self.name,
                self.slot_count,
                args.len()
            )));
        }
        let mut out = String::with_capacity(self.body.len() + args.iter().map(|a| a.len()).sum::<usize>());
        let mut args = args.iter();
        let mut chars = self.body.chars().peekable();
        while let Some(c) = chars.next() {
            match (c, chars.peek()) {
                ('{', Some('{')) => {
                    chars.next();
                    out.push('{');
                }
                ('}', Some('}')) => {
                    chars.next();
                    out.push('}');
                }
                ('{', Some('}')) => {
                    chars.next();
                    out.push_str(args.next().expect("slot count checked"));
                }
                _ => out.push(c),
            }
        }
        Ok(out)
    }
}

fn count_slots(body: &str) -> Result<usize, usize> {
    let bytes = body.as_bytes();
    let mut i = 0;
    let mut slots = 0;
    while i < bytes.len() {
        match (bytes[i], bytes.get(i + 1)) {
            (b'{', Some(b'{')) | (b'}', Some(b'}')) => i += 2,
            (b'{', Some(b'}')) => {
                slots += 1;
                i += 2;
            }
            (b'{', _) | (b'}', _) => return Err(i),
            _ => i += 1,
        }
    }
    Ok(slots)
}

/// Every prompt the pipeline uses, plus the seed tool shown in the tool prompt.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub field: PromptTemplate,
    pub subfield: PromptTemplate,
    pub tool: PromptTemplate,
    pub single_instance: PromptTemplate,
    pub combine: PromptTemplate,
    pub fill: PromptTemplate,
    pub backfill: PromptTemplate,
    pub infer: PromptTemplate,
    pub example_tool: String,
}

const SHIPPED: [(&str, &str); 8] = [
    ("field", include_str!("../../prompts/field.txt")),
    ("subfield", include_str!("../../prompts/subfield.txt")),
    ("tool", include_str!("../../prompts/tool.txt")),
    ("single_instance", include_str!("../../prompts/single_instance.txt")),
    ("combine", include_str!("../../prompts/combine.txt")),
    ("fill", include_str!("../../prompts/fill.txt")),
    ("backfill", include_str!("../../prompts/backfill.txt")),
    ("infer", include_str!("../../prompts/infer.txt")),
];
const SHIPPED_EXAMPLE_TOOL: &str = include_str!("../../prompts/example_tool.json");

const EXPECTED_SLOTS: [(&str, usize); 8] = [
    ("field", 2),
    ("subfield", 1),
    ("tool", 5),
    ("single_instance", 1),
    ("combine", 1),
    ("fill", 2),
    ("backfill", 2),
    ("infer", 2),
];

impl PromptSet {
    /// The templates compiled into the binary.
    pub fn shipped() -> PromptSet {
        Self::build(|name| {
            Ok(SHIPPED
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, body)| body.to_string())
                .expect("shipped prompt"))
        }, SHIPPED_EXAMPLE_TOOL.to_string())
        .expect("shipped prompts are well-formed")
    }

    /// Loads `<name>.txt` files from `dir`; missing files fall back to the
    /// shipped versions.
    pub fn load_dir(dir: &Path) -> Result<PromptSet, Error> {
        let read = |file: &Path| -> Result<Option<String>, Error> {
            match std::fs::read_to_string(file) {
                Ok(text) => Ok(Some(text)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(file, e)),
            }
        };
        let example = read(&dir.join("example_tool.json"))?.unwrap_or_else(|| SHIPPED_EXAMPLE_TOOL.into());
        Self::build(
            |name| {
                let shipped = SHIPPED.iter().find(|(n, _)| *n == name).expect("known prompt").1;
                Ok(read(&dir.join(format!("{name}.txt")))?.unwrap_or_else(|| shipped.to_string()))
            },
            example,
        )
    }

    fn build(
        mut body_of: impl FnMut(&str) -> Result<String, Error>,
        example_tool: String,
    ) -> Result<PromptSet, Error> {
        let mut get = |name: &str| -> Result<PromptTemplate, Error> {
            let body = body_of(name)?;
            // files end with a newline that is not part of the prompt
            let body = body.strip_suffix('\n').unwrap_or(&body).to_string();
            let template = PromptTemplate::new(name, body)?;
            let expected = EXPECTED_SLOTS.iter().find(|(n, _)| *n == name).expect("known").1;
            if template.slot_count != expected {
                return Err(Error::Config(format!(
                    "prompt {name} has {} slots, expected {expected}",
                    template.slot_count
                )));
            }
            Ok(template)
        };
        Ok(PromptSet {
            field: get("field")?,
            subfield: get("subfield")?,
            tool: get("tool")?,
            single_instance: get("single_instance")?,
            combine: get("combine")?,
            fill: get("fill")?,
            backfill: get("backfill")?,
            infer: get("infer")?,
            example_tool: example_tool.trim().to_string(),
        })
    }
}
