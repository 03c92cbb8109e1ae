/** Minimal structural validator for the shared /v1 JSON schemas.
 *
 * Supports the subset those schemas use: type, required, properties,
 * additionalProperties, items, enum, minimum, and $ref into common.json
 * definitions. Returns a list of problems; empty means valid.
 */

export interface SchemaSet {
  root: any;
  common: any;
}

/** Fragment-only refs resolve against the document containing them. */
function resolveRef(ref: string, set: SchemaSet, currentDoc: any): [any, any] {
  const [file, pointer] = ref.split("#");
  const doc = file === "" || file === undefined ? currentDoc
    : file === "common.json" ? set.common : null;
  if (!doc) return [null, null];
  if (!pointer) return [doc, doc];
  let node = doc;
  for (const part of pointer.split("/").filter((p) => p.length)) {
    node = node?.[part];
  }
  return [node, doc];
}

function typeOf(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  if (typeof value === "number") return Number.isInteger(value) ? "integer" : "number";
  return typeof value;
}

function typeMatches(declared: string, actual: string): boolean {
  if (declared === "number") return actual === "number" || actual === "integer";
  return declared === actual;
}

export function validate(value: unknown, schema: any, set: SchemaSet,
                         path = "$", currentDoc?: any): string[] {
  if (schema == null) return [];
  const doc = currentDoc ?? set.root;
  if (schema.$ref) {
    const [target, nextDoc] = resolveRef(schema.$ref, set, doc);
    if (!target) return [`${path}: unresolvable $ref ${schema.$ref}`];
    return validate(value, target, set, path, nextDoc);
  }
  const problems: string[] = [];
  const actual = typeOf(value);
  if (schema.type) {
    const declared: string[] = Array.isArray(schema.type) ? schema.type : [schema.type];
    if (!declared.some((t) => typeMatches(t, actual))) {
      return [`${path}: expected ${declared.join("|")}, got ${actual}`];
    }
  }
  if (schema.enum && !schema.enum.includes(value)) {
    problems.push(`${path}: ${JSON.stringify(value)} not in ${JSON.stringify(schema.enum)}`);
  }
  if (typeof value === "number") {
    if (schema.minimum !== undefined && value < schema.minimum) {
      problems.push(`${path}: ${value} < minimum ${schema.minimum}`);
    }
  }
  if (actual === "object") {
    const obj = value as Record<string, unknown>;
    for (const key of schema.required ?? []) {
      if (!(key in obj)) problems.push(`${path}: missing required ${key}`);
    }
    for (const [key, sub] of Object.entries(obj)) {
      const subSchema = schema.properties?.[key];
      if (subSchema) {
        problems.push(...validate(sub, subSchema, set, `${path}.${key}`, doc));
      } else if (schema.additionalProperties === false) {
        problems.push(`${path}: unexpected property ${key}`);
      }
    }
  }
  if (actual === "array" && schema.items) {
    (value as unknown[]).forEach((item, i) => {
      problems.push(...validate(item, schema.items, set, `${path}[${i}]`, doc));
    });
  }
  return problems;
}

export function assertValid(value: unknown, schema: any, set: SchemaSet): void {
  const problems = validate(value, schema, set);
  if (problems.length) {
    throw new Error(`schema violations:\n${problems.join("\n")}`);
  }
}
