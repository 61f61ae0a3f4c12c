/** Row-major run lengths alternating unselected/selected, starting unselected. */
export function rleToMask(runs: number[], width: number, height: number): Uint8Array {
  const mask = new Uint8Array(width * height);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (run < 0) throw new Error(`negative run length ${run}`);
    if (value) mask.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  if (pos !== width * height) {
    throw new Error(`run lengths cover ${pos} pixels, expected ${width * height}`);
  }
  return mask;
}

export function maskToRle(mask: Uint8Array): number[] {
  const runs: number[] = [];
  let current = 0;
  let length = 0;
  for (const v of mask) {
    const bit = v ? 1 : 0;
    if (bit === current) {
      length += 1;
    } else {
      runs.push(length);
      current = bit;
      length = 1;
    }
  }
  runs.push(length);
  return runs;
}

/** Pixel coordinates proposed by a batch, whether point- or mask-shaped. */
export function proposalPixels(batch: {
  size: [number, number];
  points?: [number, number][];
  mask_rle?: number[];
}): [number, number][] {
  if (batch.points) {
    return batch.points.map(([x, y]) => [x, y]);
  }
  if (batch.mask_rle) {
    const [w, h] = batch.size;
    const mask = rleToMask(batch.mask_rle, w, h);
    const out: [number, number][] = [];
    for (let i = 0; i < mask.length; i++) {
      if (mask[i]) out.push([i % w, Math.floor(i / w)]);
    }
    return out;
  }
  return [];
}
