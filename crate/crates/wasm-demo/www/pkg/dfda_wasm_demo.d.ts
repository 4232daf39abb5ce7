/* tslint:disable */
/* eslint-disable */

/**
 * Holds an E-block between calls so it can be pre-trained once and then
 * timed on its own.
 */
export class MixtureLab {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * One forward pass of the E-block plus the closed-form M-block.
     */
    fitDeepEm(values: Float64Array): string;
    /**
     * Iterative EM; JSON with components, iterations, convergence.
     */
    fitEm(values: Float64Array, rel_tol: number): string;
    constructor(seed: number);
    /**
     * Consistency pre-training; returns the final loss.
     */
    pretrain(values: Float64Array, steps: number): number;
}

export function gaussianDistances(mean_p: number, std_p: number, mean_q: number, std_q: number): string;

/**
 * Counts per bin of width 0.02 on `[0, 1]`.
 */
export function histogram(values: Float64Array): Uint32Array;

export function sampleScores(seed: number, n: number, weight_lo: number, mean_lo: number, std_lo: number, mean_hi: number, std_hi: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_mixturelab_free: (a: number, b: number) => void;
    readonly gaussianDistances: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly histogram: (a: number, b: number) => [number, number];
    readonly mixturelab_fitDeepEm: (a: number, b: number, c: number) => [number, number, number, number];
    readonly mixturelab_fitEm: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly mixturelab_new: (a: number) => number;
    readonly mixturelab_pretrain: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly sampleScores: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
