/** Base64-embedded little-endian arrays, matching the service wire format. */

export interface WireArray {
  shape: number[];
  dtype: "f32" | "u8";
  data: string;
}

function bytesToBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes).toString("base64");
  }
  let binary = "";
  for (let i = 0; i < bytes.length; i++) binary += String.fromCharCode(bytes[i]);
  return btoa(binary);
}

function base64ToBytes(data: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(data, "base64"));
  }
  const binary = atob(data);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

export function count(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function encodeF32(values: Float32Array, shape: number[]): WireArray {
  if (values.length !== count(shape)) {
    throw new Error(`array has ${values.length} values, shape wants ${count(shape)}`);
  }
  return { shape, dtype: "f32", data: bytesToBase64(new Uint8Array(values.buffer.slice(0))) };
}

export function encodeU8(values: Uint8Array, shape: number[]): WireArray {
  if (values.length !== count(shape)) {
    throw new Error(`array has ${values.length} values, shape wants ${count(shape)}`);
  }
  return { shape, dtype: "u8", data: bytesToBase64(values) };
}

export function decodeF32(arr: WireArray): Float32Array {
  if (arr.dtype !== "f32") throw new Error(`expected f32, got ${arr.dtype}`);
  const bytes = base64ToBytes(arr.data);
  if (bytes.byteLength !== count(arr.shape) * 4) {
    throw new Error(`payload is ${bytes.byteLength} bytes, expected ${count(arr.shape) * 4}`);
  }
  return new Float32Array(bytes.buffer, bytes.byteOffset, count(arr.shape));
}

export function decodeU8(arr: WireArray): Uint8Array {
  if (arr.dtype !== "u8") throw new Error(`expected u8, got ${arr.dtype}`);
  const bytes = base64ToBytes(arr.data);
  if (bytes.byteLength !== count(arr.shape)) {
    throw new Error(`payload is ${bytes.byteLength} bytes, expected ${count(arr.shape)}`);
  }
  return bytes;
}
