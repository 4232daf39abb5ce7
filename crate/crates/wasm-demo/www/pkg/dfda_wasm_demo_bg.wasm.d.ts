/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_mixturelab_free: (a: number, b: number) => void;
export const gaussianDistances: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const histogram: (a: number, b: number) => [number, number];
export const mixturelab_fitDeepEm: (a: number, b: number, c: number) => [number, number, number, number];
export const mixturelab_fitEm: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const mixturelab_new: (a: number) => number;
export const mixturelab_pretrain: (a: number, b: number, c: number, d: number) => [number, number, number];
export const sampleScores: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
