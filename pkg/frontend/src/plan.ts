// Client-side mirror of the plan invariants, so malformed plan forms are
// rejected before anything reaches the wire.

import type { PlanDoc } from "./types.js";

export function validatePlan(plan: PlanDoc): string[] {
  const errors: string[] = [];
  if (plan.familiarization.length !== 12) {
    errors.push(`familiarization needs 12 images, got ${plan.familiarization.length}`);
  }
  if (plan.test_pairs.length !== 18) {
    errors.push(`test phase needs 18 pairs, got ${plan.test_pairs.length}`);
  }
  const kinds = { both_new: 0, known_right: 0, known_left: 0 } as Record<string, number>;
  for (const pair of plan.test_pairs) {
    kinds[pair.kind] = (kinds[pair.kind] ?? 0) + 1;
  }
  for (const kind of ["both_new", "known_right", "known_left"]) {
    if (kinds[kind] !== 6) {
      errors.push(`${kind} pairs: ${kinds[kind] ?? 0}, need 6`);
    }
  }
  const familiarIds = new Set(plan.familiarization.map((img) => img.id));
  const seen = new Set<string>();
  for (const img of plan.familiarization) {
    if (seen.has(img.id)) errors.push(`duplicate image id ${img.id}`);
    seen.add(img.id);
  }
  for (const pair of plan.test_pairs) {
    for (const img of [pair.left_image, pair.right_image]) {
      if (img.role === "novel" && familiarIds.has(img.id)) {
        errors.push(`novel image ${img.id} appears in familiarization`);
      }
    }
  }
  return errors;
}
