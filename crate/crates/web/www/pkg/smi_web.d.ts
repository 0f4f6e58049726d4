/* tslint:disable */
/* eslint-disable */

export class NoiseTrace {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly sigma: Float64Array;
    readonly taus: Float64Array;
    readonly values: Float64Array;
}

export class SensitivityMap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly a2_max: number;
    readonly delta_s: Float64Array;
    readonly rejection_a2: number;
    readonly rejection_alpha2: number;
    readonly size: number;
}

export function noise(seed: bigint, a_p: number, rts_delta_hz: number, rts_corner_hz: number, white_psd: number, n: number, dt: number): NoiseTrace;

/**
 * ΔS over an `n × n` grid of `(a2, α2)` for a 1% amplitude or 0.01 rad phase change.
 */
export function sensitivity(a1: number, alpha1: number, delta: number, xi: number, phi: number, phase: boolean, a2_max: number, n: number): SensitivityMap;

/**
 * Flat `[Δf, x, y, …]` carrier sweep.
 */
export function spectroscopy(interferometric: boolean, half_span_linewidths: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_noisetrace_free: (a: number, b: number) => void;
    readonly __wbg_sensitivitymap_free: (a: number, b: number) => void;
    readonly noise: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly noisetrace_sigma: (a: number) => [number, number];
    readonly noisetrace_taus: (a: number) => [number, number];
    readonly noisetrace_values: (a: number) => [number, number];
    readonly sensitivity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly sensitivitymap_a2_max: (a: number) => number;
    readonly sensitivitymap_delta_s: (a: number) => [number, number];
    readonly sensitivitymap_rejection_a2: (a: number) => number;
    readonly sensitivitymap_rejection_alpha2: (a: number) => number;
    readonly sensitivitymap_size: (a: number) => number;
    readonly spectroscopy: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
