/** Wire tensors: shape + base64-encoded little-endian float32 payload. */

export interface WireTensor {
  shape: number[];
  dtype: string;
  data: string;
}

export class WireError extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

export function encodeTensor(values: Float64Array, shape: number[]): WireTensor {
  const n = shape.reduce((a, b) => a * b, 1);
  if (values.length !== n) {
    throw new WireError("internal", `tensor has ${values.length} values, shape needs ${n}`);
  }
  const f32 = new Float32Array(values);
  const buf = Buffer.from(f32.buffer, f32.byteOffset, f32.byteLength);
  return { shape: [...shape], dtype: "f32", data: buf.toString("base64") };
}

export function decodeTensor(wire: WireTensor): { values: Float64Array; shape: number[] } {
  if (!wire || !Array.isArray(wire.shape) || typeof wire.data !== "string") {
    throw new WireError("bad_request", "malformed tensor");
  }
  if (wire.dtype !== "f32") {
    throw new WireError("bad_request", `unsupported dtype ${wire.dtype}`);
  }
  const shape = wire.shape.map((d) => {
    if (!Number.isInteger(d) || d <= 0) {
      throw new WireError("bad_request", `bad dimension ${d}`);
    }
    return d;
  });
  const n = shape.reduce((a, b) => a * b, 1);
  const raw = Buffer.from(wire.data, "base64");
  if (raw.length !== 4 * n) {
    throw new WireError("bad_request", `payload is ${raw.length} bytes, shape needs ${4 * n}`);
  }
  const f32 = new Float32Array(raw.buffer, raw.byteOffset, n);
  return { values: Float64Array.from(f32), shape };
}

export function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((d, i) => d === b[i]);
}
