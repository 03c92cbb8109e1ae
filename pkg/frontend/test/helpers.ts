import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import type { SchemaSet } from "../src/schema.js";
import type { ModelInfo } from "../src/editor.js";

const here = dirname(fileURLToPath(import.meta.url));
const SCHEMA_DIR = join(here, "..", "..", "schemas", "v1");

export function loadSchemaSet(name: string): SchemaSet {
  return {
    root: JSON.parse(readFileSync(join(SCHEMA_DIR, name), "utf-8")),
    common: JSON.parse(readFileSync(join(SCHEMA_DIR, "common.json"), "utf-8")),
  };
}

export const TEST_MODEL: ModelInfo = {
  joint_names: ["pelvis", "torso", "left_foot", "right_foot"],
  feature_dim: 12,
  fps: 20,
  downrate: 4,
  max_length: 64,
  planners: ["ddm", "ar"],
};
