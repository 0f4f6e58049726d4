/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_noisetrace_free: (a: number, b: number) => void;
export const __wbg_sensitivitymap_free: (a: number, b: number) => void;
export const noise: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const noisetrace_sigma: (a: number) => [number, number];
export const noisetrace_taus: (a: number) => [number, number];
export const noisetrace_values: (a: number) => [number, number];
export const sensitivity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const sensitivitymap_a2_max: (a: number) => number;
export const sensitivitymap_delta_s: (a: number) => [number, number];
export const sensitivitymap_rejection_a2: (a: number) => number;
export const sensitivitymap_rejection_alpha2: (a: number) => number;
export const sensitivitymap_size: (a: number) => number;
export const spectroscopy: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
